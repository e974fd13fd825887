"""Covariance Matrix Adaptation Evolution Strategy (maximization convention).

Standard parameterization: log-rank recombination weights over the better
half of the population, cumulative step-size adaptation, and rank-one plus
rank-mu covariance updates with the usual dimension-dependent learning
rates. The optimizer is rank-based: any strictly increasing transform of
the fitness values leaves the trajectory bit-identical.

The ask/tell protocol is strict: ask samples exactly lambda candidates,
tell consumes that same population (same order), and a second ask without
an intervening tell is an error. All randomness flows through one seeded
PCG64 generator held by the state, so runs are reproducible and the state
can be checkpointed and resumed bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MasterprintError, NumericalStateError


def default_lambda(dim: int) -> int:
    return 4 + int(math.floor(3.0 * math.log(dim)))


@dataclass(frozen=True)
class CmaParams:
    """Static strategy constants, all functions of (dim, lambda)."""

    dim: int
    lam: int
    mu: int
    weights: np.ndarray  # length mu, positive, sums to 1, non-increasing
    mueff: float
    c_c: float
    c_sigma: float
    c_1: float
    c_mu: float
    d_sigma: float
    chi_n: float
    lazy_gap_evals: float

    @staticmethod
    def for_dim(dim: int, lam: int | None = None) -> "CmaParams":
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        lam = default_lambda(dim) if lam is None else int(lam)
        if lam < 2:
            raise ValueError(f"lambda must be >= 2, got {lam}")
        mu = lam // 2
        raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        weights = raw / raw.sum()
        mueff = float(weights.sum() ** 2 / (weights ** 2).sum())
        n = float(dim)
        c_c = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n)
        c_sigma = (mueff + 2.0) / (n + mueff + 5.0)
        c_1 = 2.0 / ((n + 1.3) ** 2 + mueff)
        c_mu = min(1.0 - c_1,
                   2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0) ** 2 + mueff))
        d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mueff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
        chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
        lazy_gap = 0.5 * n * lam / ((c_1 + c_mu) * n * n)
        weights.setflags(write=False)
        return CmaParams(dim, lam, mu, weights, mueff, c_c, c_sigma, c_1, c_mu,
                         d_sigma, chi_n, lazy_gap)


@dataclass
class Candidate:
    x: np.ndarray
    fitness: float | None = None


@dataclass
class CmaState:
    """Full mutable optimizer state; mutate only through tell()."""

    params: CmaParams
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    counteval: int
    rng: np.random.Generator
    eig_B: np.ndarray
    eig_D: np.ndarray
    eig_evals: int  # counteval when (B, D) was last refreshed
    awaiting_tell: bool = False
    _pending: np.ndarray | None = field(default=None, repr=False)

    def condition_number(self) -> float:
        vals = np.linalg.eigvalsh(self.C)
        return float(vals[-1] / max(vals[0], 1e-300))


def init(dim: int, sigma0: float, lam: int | None = None, seed: int = 0,
         mean0: np.ndarray | None = None) -> CmaState:
    """Fresh state: zero mean (the generator's latent prior), identity C."""
    if not (sigma0 > 0 and math.isfinite(sigma0)):
        raise ValueError(f"sigma0 must be positive and finite, got {sigma0}")
    params = CmaParams.for_dim(dim, lam)
    mean = np.zeros(dim) if mean0 is None else np.asarray(mean0, dtype=np.float64).copy()
    if mean.shape != (dim,):
        raise ValueError("mean0 has wrong length")
    return CmaState(
        params=params,
        mean=mean,
        sigma=float(sigma0),
        C=np.eye(dim),
        p_sigma=np.zeros(dim),
        p_c=np.zeros(dim),
        generation=0,
        counteval=0,
        rng=np.random.default_rng(seed),
        eig_B=np.eye(dim),
        eig_D=np.ones(dim),
        eig_evals=0,
    )


def _refresh_eigensystem(state: CmaState) -> None:
    if not np.all(np.isfinite(state.C)):
        raise NumericalStateError(
            "covariance matrix contains non-finite entries",
            {"generation": state.generation, "sigma": state.sigma},
        )
    vals, vecs = np.linalg.eigh(state.C)
    if vals[0] <= 0 or not np.all(np.isfinite(vals)):
        raise NumericalStateError(
            "covariance matrix is not positive definite",
            {"generation": state.generation, "min_eigenvalue": float(vals[0])},
        )
    state.eig_D = np.sqrt(vals)
    state.eig_B = vecs
    state.eig_evals = state.counteval


def ask(state: CmaState) -> list[Candidate]:
    """Sample lambda candidates x = mean + sigma * B D z, z ~ N(0, I)."""
    if state.awaiting_tell:
        raise RuntimeError("ask called again before tell of the previous population")
    if state.counteval - state.eig_evals > state.params.lazy_gap_evals:
        _refresh_eigensystem(state)
    z = state.rng.standard_normal((state.params.lam, state.params.dim))
    x = state.mean + state.sigma * (z * state.eig_D) @ state.eig_B.T
    if not np.all(np.isfinite(x)):
        raise NumericalStateError("sampled non-finite candidates",
                                  {"sigma": state.sigma})
    state.awaiting_tell = True
    state._pending = x
    return [Candidate(x[i].copy()) for i in range(state.params.lam)]


def tell(state: CmaState, candidates: list[Candidate]) -> CmaState:
    """Standard CMA-ES update from the evaluated population (maximization)."""
    p = state.params
    if not state.awaiting_tell:
        raise RuntimeError("tell called without a matching ask")
    if len(candidates) != p.lam:
        raise ValueError(f"expected {p.lam} candidates, got {len(candidates)}")
    x = np.stack([np.asarray(c.x, dtype=np.float64) for c in candidates])
    if state._pending is None or not np.array_equal(x, state._pending):
        raise ValueError("candidates do not match the pending ask population")
    fits = np.array([c.fitness for c in candidates], dtype=np.float64)
    if not np.all(np.isfinite(fits)):
        raise ValueError("all fitness values must be finite")

    state.counteval += p.lam
    n = float(p.dim)
    # Descending fitness, ties broken by candidate index for determinism.
    order = np.lexsort((np.arange(p.lam), -fits))
    xsel = x[order[: p.mu]]

    xold = state.mean
    mean_new = p.weights @ xsel
    y = (mean_new - xold) / state.sigma

    # C^(-1/2) y via the cached eigensystem.
    z = state.eig_B @ ((state.eig_B.T @ y) / state.eig_D)
    cs = p.c_sigma
    state.p_sigma = (1.0 - cs) * state.p_sigma + math.sqrt(cs * (2.0 - cs) * p.mueff) * z
    ps_norm2 = float(state.p_sigma @ state.p_sigma)
    denom = 1.0 - (1.0 - cs) ** (2.0 * state.counteval / p.lam)
    hsig = 1.0 if ps_norm2 / n / denom < 2.0 + 4.0 / (n + 1.0) else 0.0

    cc = p.c_c
    state.p_c = (1.0 - cc) * state.p_c + hsig * math.sqrt(cc * (2.0 - cc) * p.mueff) * y

    c1a = p.c_1 * (1.0 - (1.0 - hsig ** 2) * cc * (2.0 - cc))
    artmp = (xsel - xold) / state.sigma
    state.C = ((1.0 - c1a - p.c_mu) * state.C
               + p.c_1 * np.outer(state.p_c, state.p_c)
               + p.c_mu * (artmp.T * p.weights) @ artmp)
    state.C = 0.5 * (state.C + state.C.T)  # keep symmetry drift at zero

    state.sigma *= math.exp(min(1.0, (cs / p.d_sigma)
                                * (math.sqrt(ps_norm2) / p.chi_n - 1.0)))
    if not (math.isfinite(state.sigma) and state.sigma > 0):
        raise NumericalStateError("step size became invalid",
                                  {"sigma": state.sigma, "generation": state.generation})
    state.mean = mean_new
    state.generation += 1
    state.awaiting_tell = False
    state._pending = None
    return state


class EvaluationAborted(MasterprintError):
    """The objective raised; partial history is preserved on the exception."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    evals: int
    best_f: float
    sigma: float
    condition: float


@dataclass
class OptimizeResult:
    best_x: np.ndarray
    best_f: float
    history: list[GenerationRecord]
    state: CmaState
    stopped: str = "budget"


HISTORY_HEADER = "generation,evals,best_f,sigma,condition"


def history_row(rec: GenerationRecord) -> str:
    return (f"{rec.generation},{rec.evals},{rec.best_f!r},"
            f"{rec.sigma!r},{rec.condition!r}")


def stagnation_limit(dim: int, lam: int) -> int:
    return int(math.ceil(50.0 * dim / lam))


def optimize(objective, dim: int, sigma0: float, budget_evals: int, seed: int = 0,
             lam: int | None = None, workers: int = 1,
             batch_evaluator=None, state: CmaState | None = None,
             best_x: np.ndarray | None = None, best_f: float = -math.inf,
             stagnation: int = 0, history: list[GenerationRecord] | None = None,
             on_generation=None) -> OptimizeResult:
    """Ask/evaluate/tell loop until the evaluation budget or stagnation.

    Returns the best-ever candidate, never the final mean. Stagnation stops
    the run after ceil(50 * dim / lambda) generations without best-ever
    improvement. Pass the state/best/stagnation of a loaded checkpoint to
    resume; the continuation is bit-identical to an uninterrupted run.

    Candidate evaluation is the concurrency surface: either give a
    ``batch_evaluator`` (maps a list of vectors to fitnesses, order
    preserved) or set ``workers`` > 1 with a picklable objective.
    """
    if state is None:
        state = init(dim, sigma0, lam, seed)
    p = state.params
    if budget_evals < p.lam:
        raise ValueError(f"budget_evals must be at least lambda ({p.lam})")
    history = history if history is not None else []
    stop_limit = stagnation_limit(p.dim, p.lam)
    pool = None
    if batch_evaluator is None and workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers)
    stopped = "budget"
    try:
        while state.counteval + p.lam <= budget_evals:
            candidates = ask(state)
            xs = [c.x for c in candidates]
            try:
                if batch_evaluator is not None:
                    fits = list(batch_evaluator(xs))
                elif pool is not None:
                    fits = list(pool.map(objective, xs))
                else:
                    fits = [objective(x) for x in xs]
            except Exception as exc:
                raise EvaluationAborted(f"objective failed: {exc}", history) from exc
            for c, f in zip(candidates, fits):
                c.fitness = float(f)
            tell(state, candidates)

            gen_best = max(range(p.lam), key=lambda i: (candidates[i].fitness, -i))
            if candidates[gen_best].fitness > best_f:
                best_f = float(candidates[gen_best].fitness)
                best_x = candidates[gen_best].x.copy()
                stagnation = 0
            else:
                stagnation += 1
            rec = GenerationRecord(state.generation, state.counteval, best_f,
                                   state.sigma, state.condition_number())
            history.append(rec)
            if on_generation is not None:
                on_generation(state, best_x, best_f, stagnation, rec)
            if stagnation >= stop_limit:
                stopped = "stagnation"
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if best_x is None:
        raise MasterprintError("no generation completed")
    return OptimizeResult(best_x, best_f, history, state, stopped)


# --- checkpoint file ----------------------------------------------------------

_CKPT_MAGIC = b"LVEC"
_CKPT_VERSION = 1
_ARRAY_ORDER = ("mean", "p_sigma", "p_c", "C", "eig_B", "eig_D", "weights", "best_x")


def save_checkpoint(state: CmaState, best_x: np.ndarray | None, best_f: float,
                    stagnation: int, path: str | Path) -> None:
    """Versioned binary dump: JSON header, float64 little-endian blob, CRC32."""
    if state.awaiting_tell:
        raise ValueError("cannot checkpoint between ask and tell")
    p = state.params
    rng_state = state.rng.bit_generator.state
    bx = state.mean if best_x is None else best_x
    arrays = {
        "mean": state.mean, "p_sigma": state.p_sigma, "p_c": state.p_c,
        "C": state.C, "eig_B": state.eig_B, "eig_D": state.eig_D,
        "weights": p.weights, "best_x": bx,
    }
    header = {
        "dim": p.dim, "lam": p.lam, "mu": p.mu,
        "generation": state.generation, "counteval": state.counteval,
        "eig_evals": state.eig_evals, "stagnation": int(stagnation),
        "has_best": best_x is not None,
        "sigma": state.sigma.hex(),
        "best_f": float(best_f).hex(),
        "rng": {
            "kind": rng_state["bit_generator"],
            "state": str(rng_state["state"]["state"]),
            "inc": str(rng_state["state"]["inc"]),
            "has_uint32": int(rng_state["has_uint32"]),
            "uinteger": int(rng_state["uinteger"]),
        },
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
    }
    hjson = json.dumps(header).encode()
    blob = bytearray()
    blob += _CKPT_MAGIC
    blob += struct.pack("<II", _CKPT_VERSION, len(hjson))
    blob += hjson
    for key in _ARRAY_ORDER:
        blob += np.ascontiguousarray(arrays[key], dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> tuple[CmaState, np.ndarray | None, float, int]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != _CKPT_MAGIC:
        raise DataError(f"{path}: not an optimizer checkpoint")
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != struct.unpack("<I", raw[-4:])[0]:
        raise DataError(f"{path}: checkpoint CRC mismatch")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode())
    pos = 12 + hlen
    arrays = {}
    for key in _ARRAY_ORDER:
        shape = tuple(header["shapes"][key])
        n = int(np.prod(shape))
        arrays[key] = np.frombuffer(raw[pos:pos + 8 * n], dtype="<f8").reshape(shape).copy()
        pos += 8 * n
    params = CmaParams.for_dim(header["dim"], header["lam"])
    if not np.allclose(params.weights, arrays["weights"]):
        raise DataError(f"{path}: stored weights disagree with derived parameters")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": header["rng"]["kind"],
        "state": {"state": int(header["rng"]["state"]), "inc": int(header["rng"]["inc"])},
        "has_uint32": header["rng"]["has_uint32"],
        "uinteger": header["rng"]["uinteger"],
    }
    state = CmaState(
        params=params,
        mean=arrays["mean"],
        sigma=float.fromhex(header["sigma"]),
        C=arrays["C"],
        p_sigma=arrays["p_sigma"],
        p_c=arrays["p_c"],
        generation=header["generation"],
        counteval=header["counteval"],
        rng=np.random.Generator(bg),
        eig_B=arrays["eig_B"],
        eig_D=arrays["eig_D"],
        eig_evals=header["eig_evals"],
    )
    best_x = arrays["best_x"] if header["has_best"] else None
    return state, best_x, float.fromhex(header["best_f"]), header["stagnation"]
