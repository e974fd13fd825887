"""End-to-end evolution of master prints: the identity-count fitness, the
CMA-ES run over generator latents, held-out evaluation, and the random
baseline. One evaluation is generate -> extract -> count identities whose
enrolled partials contain at least one above-threshold match (early exit
per identity).
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from . import cmaes
from .errors import ConfigurationError, DataError
from .gallery import MatchThreshold, TemplateGallery
from .generator import GeneratorModel, generate, load_generator, serialize_generator
from .image import GrayImage, save_image
from .matcher import MatcherParams, _match_pair, build_edge_table, get_matcher
from .minutiae import MinutiaeTemplate, extract


class GalleryIndex:
    """Edge tables of a template gallery, concatenated for the fitness kernel.

    Immutable and shared read-only across evaluation workers.
    """

    def __init__(self, tg: TemplateGallery, matcher_id: str = "default",
                 params: MatcherParams | None = None):
        self.matcher_id = matcher_id
        self.params = params or get_matcher(matcher_id)
        self.ids = tg.ids
        d, phi, b1, b2 = [], [], [], []
        tmpl_start = [0]
        ident_start = [0]
        total = 0
        for gi in tg.identities:
            for t in gi.templates:
                et = build_edge_table(t, self.params)
                d.append(et.d)
                phi.append(et.phi)
                b1.append(et.beta1)
                b2.append(et.beta2)
                total += len(et)
                tmpl_start.append(total)
            ident_start.append(len(tmpl_start) - 1)
        self.d = np.concatenate(d) if d else np.zeros(0)
        self.phi = np.concatenate(phi) if phi else np.zeros(0)
        self.b1 = np.concatenate(b1) if b1 else np.zeros(0)
        self.b2 = np.concatenate(b2) if b2 else np.zeros(0)
        self.tmpl_start = np.array(tmpl_start, dtype=np.int64)
        self.ident_start = np.array(ident_start, dtype=np.int64)

    @property
    def n_identities(self) -> int:
        return len(self.ident_start) - 1

    def kernel_args(self):
        p = self.params
        return (self.d, self.phi, self.b1, self.b2, self.tmpl_start,
                self.ident_start, p.dist_tol_px, p.dist_tol_rel,
                math.radians(p.angle_tol_deg), math.radians(p.rotation_tol_deg))


@numba.njit(cache=True, nogil=True)
def _count_identities(pd, pphi, pb1, pb2, gd, gphi, gb1, gb2, tmpl_start,
                      ident_start, tol_px, tol_rel, ang_tol, rot_tol, thr):
    count = 0
    for i in range(ident_start.shape[0] - 1):
        for t in range(ident_start[i], ident_start[i + 1]):
            s0, s1 = tmpl_start[t], tmpl_start[t + 1]
            sc = _match_pair(pd, pphi, pb1, pb2, gd[s0:s1], gphi[s0:s1],
                             gb1[s0:s1], gb2[s0:s1],
                             tol_px, tol_rel, ang_tol, rot_tol, thr)
            if sc >= thr:
                count += 1
                break
    return count


@numba.njit(cache=True, nogil=True)
def _best_scores(pd, pphi, pb1, pb2, gd, gphi, gb1, gb2, tmpl_start,
                 ident_start, tol_px, tol_rel, ang_tol, rot_tol):
    n = ident_start.shape[0] - 1
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        best = 0
        for t in range(ident_start[i], ident_start[i + 1]):
            s0, s1 = tmpl_start[t], tmpl_start[t + 1]
            sc = _match_pair(pd, pphi, pb1, pb2, gd[s0:s1], gphi[s0:s1],
                             gb1[s0:s1], gb2[s0:s1],
                             tol_px, tol_rel, ang_tol, rot_tol, 0)
            if sc > best:
                best = sc
        out[i] = best
    return out


def _probe_arrays(probe, index: GalleryIndex):
    if isinstance(probe, GrayImage):
        probe = extract(probe)
    if isinstance(probe, MinutiaeTemplate):
        probe = build_edge_table(probe, index.params)
    return probe.d, probe.phi, probe.beta1, probe.beta2


def matching_score(probe, index_or_gallery, thr: MatchThreshold) -> int:
    """Number of identities with at least one partial matching the probe.

    ``probe`` may be a GrayImage (extracted once here), a template, or a
    prebuilt edge table.
    """
    index = (index_or_gallery if isinstance(index_or_gallery, GalleryIndex)
             else GalleryIndex(index_or_gallery, thr.matcher_id))
    if thr.matcher_id != index.matcher_id:
        raise ConfigurationError(
            f"threshold calibrated for {thr.matcher_id!r}, index built for "
            f"{index.matcher_id!r}")
    args = index.kernel_args()
    pd, pphi, pb1, pb2 = _probe_arrays(probe, index)
    return int(_count_identities(pd, pphi, pb1, pb2, *args, thr.score))


def identity_best_scores(probe, index: GalleryIndex) -> np.ndarray:
    """Best match score against each identity (no early exit)."""
    pd, pphi, pb1, pb2 = _probe_arrays(probe, index)
    return _best_scores(pd, pphi, pb1, pb2, *index.kernel_args())


# --- fitness evaluation (optionally in worker processes) ----------------------

_WORKER_CTX: dict = {}


@dataclass(frozen=True)
class FitnessTask:
    """Picklable evaluation context shipped once to each worker."""

    model_blob: bytes
    index_args: tuple
    params: MatcherParams
    threshold: int
    smoothed: bool

    def evaluate(self, model: GeneratorModel, z: np.ndarray) -> float:
        img = generate(model, z)
        et = build_edge_table(extract(img), self.params)
        pd, pphi, pb1, pb2 = et.d, et.phi, et.beta1, et.beta2
        if self.smoothed:
            scores = _best_scores(pd, pphi, pb1, pb2, *self.index_args)
            count = int(np.sum(scores >= self.threshold))
            tie = float(np.mean(scores / (scores + self.threshold)))
            return count + 1e-3 * tie
        return float(_count_identities(pd, pphi, pb1, pb2, *self.index_args,
                                       self.threshold))


def _make_task(model: GeneratorModel, index: GalleryIndex, thr: MatchThreshold,
               smoothed: bool) -> FitnessTask:
    if thr.matcher_id != index.matcher_id:
        raise ConfigurationError(
            f"threshold calibrated for {thr.matcher_id!r}, index built for "
            f"{index.matcher_id!r}")
    return FitnessTask(serialize_generator(model), index.kernel_args(),
                       index.params, thr.score, smoothed)


def _init_worker(task: FitnessTask):
    _WORKER_CTX["task"] = task
    _WORKER_CTX["model"] = load_generator(task.model_blob)


def _worker_eval(z: np.ndarray) -> float:
    return _WORKER_CTX["task"].evaluate(_WORKER_CTX["model"], z)


class FitnessEvaluator:
    """Serial or process-parallel latent fitness evaluation, order-preserving."""

    def __init__(self, model: GeneratorModel, index: GalleryIndex,
                 thr: MatchThreshold, smoothed: bool = False, workers: int = 1):
        self.task = _make_task(model, index, thr, smoothed)
        self.model = model
        self.workers = max(1, workers)
        self._pool = None
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.workers,
                                             initializer=_init_worker,
                                             initargs=(self.task,))

    def __call__(self, xs: list[np.ndarray]) -> list[float]:
        if self._pool is None:
            return [self.task.evaluate(self.model, z) for z in xs]
        chunk = max(1, len(xs) // (self.workers * 2))
        return list(self._pool.map(_worker_eval, xs, chunksize=chunk))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


# --- evolution run -------------------------------------------------------------

@dataclass
class AttackConfig:
    """Everything an evolution run needs, as file paths plus scalars."""

    weights: str
    gallery_dir: str            # gallery-build output (templates/ + split.tsv)
    thresholds_dir: str
    split: str = "train"
    matcher_id: str = "default"
    fmr: float = 0.01
    fmr_targets: tuple[float, ...] = (0.01, 0.001, 0.0001)
    sigma0: float = 1.0
    lam: int | None = None
    budget: int = 5000
    seed: int = 0
    workers: int = 1
    smoothed_fitness: bool = False
    out_dir: str = "evolution_out"
    resume: str | None = None
    verbose: bool = False

    def __post_init__(self):
        for f in self.fmr_targets:
            if not (0.0 < f <= 1.0):
                raise ValueError(f"fmr target {f} outside (0, 1]")
        if not (0.0 < self.fmr <= 1.0):
            raise ValueError(f"fmr {self.fmr} outside (0, 1]")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["fmr_targets"] = list(self.fmr_targets)
        return d


@dataclass
class EvolutionResult:
    best_latent: np.ndarray
    best_image: GrayImage
    fitness_train: int
    best_f: float
    history: list[cmaes.GenerationRecord]
    thresholds: list[MatchThreshold]
    config: dict
    generations: int = 0
    evals: int = 0
    stopped: str = "budget"
    out_dir: Path | None = None


def run_evolution(model: GeneratorModel, index: GalleryIndex, thr: MatchThreshold,
                  budget: int, seed: int = 0, sigma0: float = 1.0,
                  lam: int | None = None, workers: int = 1,
                  smoothed: bool = False, out_dir: str | Path | None = None,
                  resume: str | Path | None = None, verbose: bool = False,
                  config_echo: dict | None = None,
                  thresholds: list[MatchThreshold] | None = None) -> EvolutionResult:
    """Evolve a latent maximizing the identity-match count at one threshold.

    Checkpoints every generation; ``resume`` continues from a checkpoint file
    and reproduces the uninterrupted run bit-for-bit. Artifacts land in
    ``out_dir`` (checkpoint, history CSV, best image/latent, config echo).
    """
    dim = model.latent_dim
    out = Path(out_dir) if out_dir is not None else None
    history_fh = None
    ckpt_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "checkpoint.bin"

    if resume is not None:
        state, best_x, best_f, stagnation = cmaes.load_checkpoint(resume)
        history: list[cmaes.GenerationRecord] = []
        if out is not None:
            history_fh = open(out / "history.csv", "a")
    else:
        state, best_x, best_f, stagnation = None, None, -math.inf, 0
        history = []
        if out is not None:
            history_fh = open(out / "history.csv", "w")
            history_fh.write(cmaes.HISTORY_HEADER + "\n")

    evaluator = FitnessEvaluator(model, index, thr, smoothed, workers)

    def on_generation(st, bx, bf, stag, rec):
        if history_fh is not None:
            history_fh.write(cmaes.history_row(rec) + "\n")
            history_fh.flush()
        if ckpt_path is not None:
            cmaes.save_checkpoint(st, bx, bf, stag, ckpt_path)
        if verbose:
            print(f"gen {rec.generation:4d}  evals {rec.evals:6d}  "
                  f"best {rec.best_f:.4f}  sigma {rec.sigma:.3f}", file=sys.stderr)

    try:
        res = cmaes.optimize(None, dim, sigma0, budget, seed=seed, lam=lam,
                             batch_evaluator=evaluator, state=state,
                             best_x=best_x, best_f=best_f, stagnation=stagnation,
                             history=history, on_generation=on_generation)
    finally:
        evaluator.close()
        if history_fh is not None:
            history_fh.close()

    best_image = generate(model, res.best_x)
    fitness_train = matching_score(best_image, index, thr)
    result = EvolutionResult(
        best_latent=res.best_x,
        best_image=best_image,
        fitness_train=fitness_train,
        best_f=res.best_f,
        history=res.history,
        thresholds=thresholds or [thr],
        config=config_echo or {},
        generations=res.state.generation,
        evals=res.state.counteval,
        stopped=res.stopped,
        out_dir=out,
    )
    if out is not None:
        _write_result(result, out)
    return result


def _write_result(result: EvolutionResult, out: Path) -> None:
    save_image(result.best_image, out / "best.png")
    save_image(result.best_image, out / "best.pgm")
    np.savetxt(out / "best_latent.csv", result.best_latent.reshape(1, -1),
               delimiter=",", fmt="%.17g")
    (out / "thresholds.json").write_text(json.dumps(
        [json.loads(t.to_json()) for t in result.thresholds], indent=2))
    (out / "config.json").write_text(json.dumps(result.config, indent=2))
    (out / "result.json").write_text(json.dumps({
        "fitness_train": result.fitness_train,
        "best_f": result.best_f,
        "generations": result.generations,
        "evals": result.evals,
        "stopped": result.stopped,
        # report metric only: evolved prints tend to carry a few dozen
        # minutiae; nothing asserts this
        "best_image_minutiae": len(extract(result.best_image)),
    }, indent=2))


def load_best_latent(out_dir: str | Path) -> np.ndarray:
    return np.loadtxt(Path(out_dir) / "best_latent.csv", delimiter=",").reshape(-1)


def _threshold_file(thr_dir: Path, matcher_id: str, fmr: float) -> Path:
    return thr_dir / f"threshold_{matcher_id}_{format(fmr, 'g')}.json"


def evolve_masterprint(cfg: AttackConfig) -> EvolutionResult:
    """Path-based orchestration of a full evolution run.

    Loads the generator, the enrolled gallery side, and the calibrated
    threshold at cfg.fmr, then runs the evolution into cfg.out_dir. Missing
    inputs fail before any compute.
    """
    from .gallery import load_template_gallery, load_threshold, read_split
    from .generator import load_generator_file

    weights = Path(cfg.weights)
    gallery_dir = Path(cfg.gallery_dir)
    thr_dir = Path(cfg.thresholds_dir)
    for path, what in ((weights, "weights file"), (gallery_dir, "gallery directory"),
                       (thr_dir, "thresholds directory")):
        if not path.exists():
            raise DataError(f"{what} {path} does not exist")
    thr_path = _threshold_file(thr_dir, cfg.matcher_id, cfg.fmr)
    if not thr_path.exists():
        raise DataError(f"no threshold file {thr_path}; run calibration first")

    model = load_generator_file(weights)
    tg = load_template_gallery(gallery_dir / "templates")
    if cfg.split != "all":
        train, test = read_split(gallery_dir / "split.tsv")
        tg = tg.subset(train if cfg.split == "train" else test)
    index = GalleryIndex(tg, cfg.matcher_id)
    thr = load_threshold(thr_path)

    all_thresholds = [load_threshold(p) for p in
                      (_threshold_file(thr_dir, cfg.matcher_id, f)
                       for f in cfg.fmr_targets) if p.exists()]
    echo = cfg.to_dict()
    echo["fitness"] = "smoothed" if cfg.smoothed_fitness else "identity-count"
    return run_evolution(
        model, index, thr, budget=cfg.budget, seed=cfg.seed, sigma0=cfg.sigma0,
        lam=cfg.lam, workers=cfg.workers, smoothed=cfg.smoothed_fitness,
        out_dir=cfg.out_dir, resume=cfg.resume, verbose=cfg.verbose,
        config_echo=echo, thresholds=all_thresholds or [thr])


# --- evaluation and baselines ---------------------------------------------------

@dataclass(frozen=True)
class EvaluationRow:
    matcher_id: str
    fmr: float
    threshold: int
    matched: int
    total: int

    @property
    def percent(self) -> float:
        return 100.0 * self.matched / self.total if self.total else 0.0


def evaluate_masterprint(img: GrayImage, tg: TemplateGallery, matcher_id: str,
                         thresholds: list[MatchThreshold]) -> list[EvaluationRow]:
    """Identity match percentages at each threshold for one matcher."""
    for thr in thresholds:
        if thr.matcher_id != matcher_id:
            raise ConfigurationError(
                f"threshold for fmr {thr.fmr} was calibrated on "
                f"{thr.matcher_id!r}, not {matcher_id!r}")
    index = GalleryIndex(tg, matcher_id)
    best = identity_best_scores(img, index)
    rows = []
    for thr in thresholds:
        rows.append(EvaluationRow(matcher_id, thr.fmr, thr.score,
                                  int(np.sum(best >= thr.score)), len(best)))
    return rows


def random_baseline(model: GeneratorModel, index: GalleryIndex, thr: MatchThreshold,
                    n_samples: int, seed: int = 0, workers: int = 1) -> dict:
    """Fitness distribution of untuned N(0,1) latents."""
    rng = np.random.default_rng(seed)
    zs = [rng.standard_normal(model.latent_dim) for _ in range(n_samples)]
    evaluator = FitnessEvaluator(model, index, thr, smoothed=False, workers=workers)
    try:
        scores = np.array(evaluator(zs))
    finally:
        evaluator.close()
    return {
        "n_samples": int(n_samples),
        "min": float(scores.min()),
        "median": float(np.median(scores)),
        "p95": float(np.percentile(scores, 95)),
        "max": float(scores.max()),
        "scores": scores,
    }
