"""Gallery ingestion, enrollment, impostor-score estimation, and FMR
threshold calibration.

A gallery is one directory per identity holding 8-bit grayscale PNG/PGM
partial prints (or an explicit manifest file). Impostor scores are
cross-identity template comparisons; thresholds are integer order
statistics of the impostor score sample.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import CalibrationError, IngestError
from .image import GrayImage, load_image
from .matcher import MatcherParams, build_edge_table, match_score
from .minutiae import MinutiaeTemplate, extract, load_template, save_template

IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True)
class GalleryIdentity:
    identity_id: str
    images: tuple[GrayImage, ...]


@dataclass(frozen=True)
class Gallery:
    identities: tuple[GalleryIdentity, ...]
    errors: tuple[str, ...] = ()

    @property
    def ids(self) -> list[str]:
        return [g.identity_id for g in self.identities]

    def __len__(self) -> int:
        return len(self.identities)


@dataclass(frozen=True)
class TemplateIdentity:
    identity_id: str
    templates: tuple[MinutiaeTemplate, ...]


@dataclass(frozen=True)
class TemplateGallery:
    identities: tuple[TemplateIdentity, ...]

    @property
    def ids(self) -> list[str]:
        return [g.identity_id for g in self.identities]

    def __len__(self) -> int:
        return len(self.identities)

    def subset(self, ids) -> "TemplateGallery":
        wanted = set(ids)
        return TemplateGallery(tuple(g for g in self.identities if g.identity_id in wanted))


def _identity_files(root: Path) -> list[tuple[str, list[Path]]]:
    manifest = root / "manifest"
    if manifest.is_file():
        grouped: dict[str, list[Path]] = {}
        for ln in manifest.read_text().splitlines():
            ln = ln.strip()
            if not ln:
                continue
            try:
                ident, rel = ln.split("\t")
            except ValueError as exc:
                raise IngestError(f"bad manifest line: {ln!r}") from exc
            grouped.setdefault(ident, []).append(root / rel)
        return sorted((k, sorted(v)) for k, v in grouped.items())
    out = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in sub.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        out.append((sub.name, files))
    return out


def ingest(root: str | Path, crop_size: int | None = None, seed: int = 0) -> Gallery:
    """Load an identity-per-directory image tree.

    With ``crop_size`` set, a seeded random crop of that size is taken from
    every image (full-size sources); smaller or equal images load verbatim
    only when they exactly match. Unreadable files are collected as errors
    and skipped; the run continues.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"gallery root {root} is not a directory")
    groups = _identity_files(root)
    if not groups:
        raise IngestError(f"gallery root {root} has no identity directories")
    rng = np.random.default_rng(seed)
    identities = []
    errors = []
    for ident, files in groups:
        images = []
        for f in files:
            try:
                img = load_image(f)
                if crop_size is not None and img.shape != (crop_size, crop_size):
                    h, w = img.shape
                    if h < crop_size or w < crop_size:
                        raise IngestError(
                            f"{f}: image {h}x{w} smaller than crop size {crop_size}"
                        )
                    y0 = int(rng.integers(0, h - crop_size + 1))
                    x0 = int(rng.integers(0, w - crop_size + 1))
                    img = GrayImage(img.pixels[y0:y0 + crop_size, x0:x0 + crop_size].copy())
                images.append(img)
            except Exception as exc:  # per-file: collect and continue
                errors.append(f"{f}: {exc}")
        if not images:
            errors.append(f"{ident}: no readable images")
            continue
        identities.append(GalleryIdentity(ident, tuple(images)))
    if not identities:
        raise IngestError(f"no identity in {root} produced readable images")
    return Gallery(tuple(identities), tuple(errors))


def _extract_pixels(pixels: np.ndarray) -> MinutiaeTemplate:
    return extract(GrayImage(pixels))


def enroll(g: Gallery, workers: int = 1) -> TemplateGallery:
    """Extract a template for every partial; empty templates are retained."""
    flat = [(gi.identity_id, img) for gi in g.identities for img in gi.images]
    if workers > 1 and len(flat) > 8:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            templates = list(pool.map(_extract_pixels, [img.pixels for _, img in flat],
                                      chunksize=max(1, len(flat) // (workers * 4))))
    else:
        templates = [extract(img) for _, img in flat]
    out = []
    pos = 0
    for gi in g.identities:
        k = len(gi.images)
        out.append(TemplateIdentity(gi.identity_id, tuple(templates[pos:pos + k])))
        pos += k
    return TemplateGallery(tuple(out))


def save_template_gallery(tg: TemplateGallery, root: str | Path) -> None:
    root = Path(root)
    for gi in tg.identities:
        d = root / gi.identity_id
        d.mkdir(parents=True, exist_ok=True)
        for i, t in enumerate(gi.templates):
            save_template(t, d / f"t{i:03d}.mnt")


def load_template_gallery(root: str | Path) -> TemplateGallery:
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"template gallery root {root} is not a directory")
    out = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(sub.glob("*.mnt"))
        out.append(TemplateIdentity(sub.name, tuple(load_template(f) for f in files)))
    if not out:
        raise IngestError(f"no templates under {root}")
    return TemplateGallery(tuple(out))


# --- train/test split --------------------------------------------------------

def split_identities(ids, ratio: float = 0.5, seed: int = 0) -> tuple[list[str], list[str]]:
    """Disjoint identity-level split by seeded shuffle; no subject overlap."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise IngestError("identity ids are not unique")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(ids)))
    n_train = int(round(len(ids) * ratio))
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    assert not set(train) & set(test)
    return train, test


def write_split(path: str | Path, train, test) -> None:
    lines = [f"{i}\ttrain" for i in train] + [f"{i}\ttest" for i in test]
    Path(path).write_text("\n".join(lines) + "\n")


def read_split(path: str | Path) -> tuple[list[str], list[str]]:
    train, test = [], []
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln:
            continue
        ident, side = ln.split("\t")
        (train if side == "train" else test).append(ident)
    overlap = set(train) & set(test)
    if overlap:
        raise IngestError(f"split file assigns identities to both sides: {sorted(overlap)}")
    return train, test


# --- impostor scores and thresholds ------------------------------------------

def _flat_templates(tg: TemplateGallery):
    owners = []
    templates = []
    for idx, gi in enumerate(tg.identities):
        for t in gi.templates:
            owners.append(idx)
            templates.append(t)
    return np.array(owners), templates


def cross_pair_count(tg: TemplateGallery) -> int:
    ks = [len(gi.templates) for gi in tg.identities]
    total = sum(ks)
    return total * (total - 1) // 2 - sum(k * (k - 1) // 2 for k in ks)


def sample_impostor_pairs(tg: TemplateGallery, sample_pairs: int, seed: int
                          ) -> list[tuple[int, int]]:
    """Uniform sample of cross-identity template pairs without replacement
    (every pair when fewer exist than requested)."""
    owners, _ = _flat_templates(tg)
    total_cross = cross_pair_count(tg)
    if total_cross < 1:
        raise CalibrationError("gallery yields no cross-identity pair")
    n = len(owners)
    if sample_pairs >= total_cross:
        return [(a, b) for a in range(n) for b in range(a + 1, n)
                if owners[a] != owners[b]]
    rng = np.random.default_rng(seed)
    chosen: set[tuple[int, int]] = set()
    out = []
    while len(out) < sample_pairs:
        a = int(rng.integers(0, n))
        b = int(rng.integers(0, n))
        if a == b or owners[a] == owners[b]:
            continue
        key = (a, b) if a < b else (b, a)
        if key in chosen:
            continue
        chosen.add(key)
        out.append(key)
    return out


def impostor_scores(tg: TemplateGallery, sample_pairs: int, seed: int,
                    params: MatcherParams | None = None) -> np.ndarray:
    """Scores of seeded cross-identity pairs, order-independent multiset."""
    if len(tg) < 2:
        raise CalibrationError("impostor scoring needs at least 2 identities")
    params = params or MatcherParams()
    pairs = sample_impostor_pairs(tg, sample_pairs, seed)
    _, templates = _flat_templates(tg)
    tables = [build_edge_table(t, params) for t in templates]
    return np.array([match_score(tables[a], tables[b], params) for a, b in pairs],
                    dtype=np.int64)


@dataclass(frozen=True)
class MatchThreshold:
    fmr: float
    score: int
    matcher_id: str
    calibration_pairs: int
    empirical_fmr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "MatchThreshold":
        d = json.loads(text)
        return MatchThreshold(float(d["fmr"]), int(d["score"]), str(d["matcher_id"]),
                              int(d["calibration_pairs"]), float(d["empirical_fmr"]))


def threshold_for_fmr(scores: np.ndarray, fmr: float, matcher_id: str = "default"
                      ) -> MatchThreshold:
    """Smallest integer threshold whose empirical pass rate is <= fmr,
    clamped below at the minimum observed score (fmr = 1 passes everything)."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise CalibrationError("cannot calibrate on an empty score sample")
    if not (0.0 < fmr <= 1.0):
        raise ValueError(f"fmr must be in (0, 1], got {fmr}")
    n = scores.size
    allowed = int(math.floor(fmr * n + 1e-9))
    ordered = np.sort(scores)
    if allowed >= n:
        t = int(ordered[0])
    else:
        t = int(ordered[n - allowed - 1]) + 1
        t = max(t, int(ordered[0]))
    empirical = float(np.mean(scores >= t))
    return MatchThreshold(fmr, t, matcher_id, int(n), empirical)


def empirical_fmr(tg: TemplateGallery, thr: MatchThreshold, sample_pairs: int,
                  seed: int, params: MatcherParams | None = None) -> float:
    """Pass rate of sampled cross-identity pairs at the given threshold."""
    scores = impostor_scores(tg, sample_pairs, seed, params)
    return float(np.mean(scores >= thr.score))


def save_threshold(thr: MatchThreshold, path: str | Path) -> None:
    Path(path).write_text(thr.to_json())


def load_threshold(path: str | Path) -> MatchThreshold:
    return MatchThreshold.from_json(Path(path).read_text())
