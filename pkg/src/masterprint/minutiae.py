"""Classical minutiae extraction: normalize, orientation field, adaptive
binarization, Zhang-Suen thinning, crossing-number detection, and spurious
minutiae filtering. All operations are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage

from .errors import DataError
from .image import GrayImage

KIND_ENDING = "ending"
KIND_BIFURCATION = "bifurcation"

NORM_MEAN = 128.0
NORM_STD = 48.0

DEFAULT_BLOCK_SIZE = 16
BINARIZE_WINDOW = 15
BINARIZE_OFFSET = 0.0

# Filtering constants (see README for the rationale): coherence below
# COHERENCE_MIN together with variance below VARIANCE_MIN marks a block as
# background; the variance bound is deliberately loose so incoherent but
# high-variance regions (noise) still count as background.
COHERENCE_MIN = 0.25
VARIANCE_MIN = 10000.0
BORDER_MARGIN = 10.0
MERGE_RADIUS = 6.0
DUPLICATE_RADIUS = 6.0
MIN_COMPONENT_PIXELS = 12

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, order=True)
class Minutia:
    y: float
    x: float
    theta: float  # ridge direction, radians in [0, 2*pi)
    kind: str
    quality: float


@dataclass(frozen=True)
class MinutiaeTemplate:
    """Minutiae sorted by (y, x); the canonical order for serialization."""

    minutiae: tuple[Minutia, ...]
    source_shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.minutiae)

    def xy(self) -> np.ndarray:
        return np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64).reshape(-1, 2)

    def thetas(self) -> np.ndarray:
        return np.array([m.theta for m in self.minutiae], dtype=np.float64)


def make_template(minutiae, source_shape) -> MinutiaeTemplate:
    ordered = tuple(sorted(minutiae, key=lambda m: (m.y, m.x)))
    h, w = source_shape
    for m in ordered:
        if not (0 <= m.y < h and 0 <= m.x < w):
            raise ValueError(f"minutia ({m.x}, {m.y}) outside image bounds {source_shape}")
        if not (0.0 <= m.theta < _TWO_PI):
            raise ValueError(f"theta {m.theta} not normalized to [0, 2*pi)")
    return MinutiaeTemplate(ordered, (int(h), int(w)))


@dataclass(frozen=True)
class OrientationField:
    """Per-block ridge orientation in [0, pi), coherence in [0, 1], and a
    foreground mask derived from coherence and block variance."""

    block_size: int
    angles: np.ndarray
    coherence: np.ndarray
    foreground: np.ndarray


def normalize(img: GrayImage, mean: float = NORM_MEAN, std: float = NORM_STD) -> GrayImage:
    """Piecewise variance normalization toward the target mean/std."""
    f = img.pixels.astype(np.float64)
    m = f.mean()
    var = f.var()
    if var <= 0:
        out = np.full(f.shape, mean)
    else:
        dev = np.sqrt((std * std) * (f - m) ** 2 / var)
        out = np.where(f > m, mean + dev, mean - dev)
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _block_reduce_sum(a: np.ndarray, block: int) -> np.ndarray:
    idx_y = np.arange(0, a.shape[0], block)
    idx_x = np.arange(0, a.shape[1], block)
    return np.add.reduceat(np.add.reduceat(a, idx_y, axis=0), idx_x, axis=1)


def orientation_field(img: GrayImage, block_size: int = DEFAULT_BLOCK_SIZE) -> OrientationField:
    """Dominant per-block ridge orientation from gradient-squared averaging."""
    if block_size < 4:
        raise ValueError("block_size must be >= 4")
    f = img.pixels.astype(np.float64)
    gy = ndimage.sobel(f, axis=0, mode="reflect")
    gx = ndimage.sobel(f, axis=1, mode="reflect")
    gxx = _block_reduce_sum(gx * gx, block_size)
    gyy = _block_reduce_sum(gy * gy, block_size)
    gxy = _block_reduce_sum(gx * gy, block_size)

    # Doubled-angle average of gradient directions; ridges run perpendicular.
    grad_angle = 0.5 * np.arctan2(2.0 * gxy, gxx - gyy)
    angles = np.mod(grad_angle + 0.5 * np.pi, np.pi)
    coherence = np.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy) / (gxx + gyy + 1e-12)

    counts = _block_reduce_sum(np.ones_like(f), block_size)
    sums = _block_reduce_sum(f, block_size)
    sq = _block_reduce_sum(f * f, block_size)
    variance = sq / counts - (sums / counts) ** 2
    foreground = ~((coherence < COHERENCE_MIN) & (variance < VARIANCE_MIN))
    return OrientationField(block_size, angles, np.clip(coherence, 0.0, 1.0), foreground)


@numba.njit(cache=True, nogil=True)
def _thin_pass(img, flags, step):
    h, w = img.shape
    changed = 0
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            if img[y, x] == 0:
                continue
            p2 = img[y - 1, x]
            p3 = img[y - 1, x + 1]
            p4 = img[y, x + 1]
            p5 = img[y + 1, x + 1]
            p6 = img[y + 1, x]
            p7 = img[y + 1, x - 1]
            p8 = img[y, x - 1]
            p9 = img[y - 1, x - 1]
            b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            if b < 2 or b > 6:
                continue
            a = 0
            if p2 == 0 and p3 == 1:
                a += 1
            if p3 == 0 and p4 == 1:
                a += 1
            if p4 == 0 and p5 == 1:
                a += 1
            if p5 == 0 and p6 == 1:
                a += 1
            if p6 == 0 and p7 == 1:
                a += 1
            if p7 == 0 and p8 == 1:
                a += 1
            if p8 == 0 and p9 == 1:
                a += 1
            if p9 == 0 and p2 == 1:
                a += 1
            if a != 1:
                continue
            if step == 0:
                if p2 * p4 * p6 != 0 or p4 * p6 * p8 != 0:
                    continue
            else:
                if p2 * p4 * p8 != 0 or p2 * p6 * p8 != 0:
                    continue
            flags[y, x] = 1
            changed += 1
    if changed:
        for y in range(1, h - 1):
            for x in range(1, w - 1):
                if flags[y, x]:
                    img[y, x] = 0
                    flags[y, x] = 0
    return changed


@numba.njit(cache=True, nogil=True)
def _count_components(win):
    h, w = win.shape
    seen = np.zeros((h, w), dtype=np.uint8)
    stack = np.empty((h * w, 2), dtype=np.int64)
    comps = 0
    for i in range(h):
        for j in range(w):
            if win[i, j] and not seen[i, j]:
                comps += 1
                top = 0
                stack[0, 0] = i
                stack[0, 1] = j
                seen[i, j] = 1
                while top >= 0:
                    ci, cj = stack[top, 0], stack[top, 1]
                    top -= 1
                    for di in range(-1, 2):
                        for dj in range(-1, 2):
                            ni, nj = ci + di, cj + dj
                            if 0 <= ni < h and 0 <= nj < w and win[ni, nj] and not seen[ni, nj]:
                                seen[ni, nj] = 1
                                top += 1
                                stack[top, 0] = ni
                                stack[top, 1] = nj
    return comps


@numba.njit(cache=True, nogil=True)
def _break_squares(img):
    # Remove one pixel from every remaining 2x2 all-on block, preferring a
    # pixel whose removal keeps the local 8-connectivity intact.
    h, w = img.shape
    changed = 1
    while changed:
        changed = 0
        for y in range(1, h - 2):
            for x in range(1, w - 2):
                if not (img[y, x] and img[y, x + 1] and img[y + 1, x] and img[y + 1, x + 1]):
                    continue
                y0 = max(0, y - 2)
                y1 = min(h, y + 4)
                x0 = max(0, x - 2)
                x1 = min(w, x + 4)
                win = img[y0:y1, x0:x1].copy()
                base = _count_components(win)
                removed = False
                for dy in range(2):
                    for dx in range(2):
                        wy, wx = y + dy - y0, x + dx - x0
                        win[wy, wx] = 0
                        if _count_components(win) <= base:
                            img[y + dy, x + dx] = 0
                            removed = True
                            break
                        win[wy, wx] = 1
                    if removed:
                        break
                if not removed:
                    # Enforce the 1-pixel-wide invariant; drop the member
                    # with the fewest neighbors (first in scan order on ties).
                    best_b = 99
                    by, bx = y, x
                    for dy in range(2):
                        for dx in range(2):
                            yy, xx = y + dy, x + dx
                            b = (img[yy - 1, xx] + img[yy - 1, xx + 1] + img[yy, xx + 1]
                                 + img[yy + 1, xx + 1] + img[yy + 1, xx] + img[yy + 1, xx - 1]
                                 + img[yy, xx - 1] + img[yy - 1, xx - 1])
                            if b < best_b:
                                best_b = b
                                by, bx = yy, xx
                    img[by, bx] = 0
                changed = 1
    return img


def zhang_suen_thin(binary: np.ndarray) -> np.ndarray:
    """Iterate Zhang-Suen passes to a fixed point; 1-pixel-wide skeleton."""
    img = np.zeros(binary.shape, dtype=np.uint8)
    img[1:-1, 1:-1] = binary[1:-1, 1:-1].astype(np.uint8)
    flags = np.zeros_like(img)
    while True:
        c1 = _thin_pass(img, flags, 0)
        c2 = _thin_pass(img, flags, 1)
        if c1 + c2 == 0:
            break
    _break_squares(img)
    return img.astype(bool)


def binarize_and_thin(img: GrayImage) -> np.ndarray:
    """Adaptive-mean binarization followed by Zhang-Suen thinning.

    Ridges are the dark side of the local mean; the returned boolean
    skeleton marks ridge center lines.
    """
    f = img.pixels.astype(np.float64)
    local_mean = ndimage.uniform_filter(f, size=BINARIZE_WINDOW, mode="reflect")
    on = f < (local_mean - BINARIZE_OFFSET)
    return zhang_suen_thin(on)


# Neighbor bit weights in clockwise ring order (NW, N, NE, E, SE, S, SW, W),
# so the crossing number is the count of 0->1 transitions around the ring.
_CN_KERNEL = np.array([[1, 2, 4], [128, 0, 8], [64, 32, 16]], dtype=np.int32)


def _cn_lut() -> np.ndarray:
    lut = np.zeros(256, dtype=np.uint8)
    for v in range(256):
        bits = [(v >> k) & 1 for k in range(8)]
        lut[v] = sum(1 for k in range(8) if bits[k] == 0 and bits[(k + 1) % 8] == 1)
    return lut


_CN_TABLE = _cn_lut()


def crossing_numbers(skeleton: np.ndarray) -> np.ndarray:
    """Crossing number of each skeleton pixel (0 elsewhere)."""
    s = skeleton.astype(np.int32)
    codes = ndimage.correlate(s, _CN_KERNEL, mode="constant", cval=0)
    return np.where(skeleton, _CN_TABLE[codes], 0).astype(np.uint8)


def _local_centroid_dir(skeleton: np.ndarray, y: int, x: int, radius: int = 5):
    """Unit direction from (y, x) toward the local skeleton mass."""
    h, w = skeleton.shape
    y0, y1 = max(0, y - radius), min(h, y + radius + 1)
    x0, x1 = max(0, x - radius), min(w, x + radius + 1)
    ys, xs = np.nonzero(skeleton[y0:y1, x0:x1])
    if len(ys) < 2:
        return 0.0, 0.0
    dy = float(ys.mean() + y0 - y)
    dx = float(xs.mean() + x0 - x)
    n = math.hypot(dy, dx)
    if n < 1e-9:
        return 0.0, 0.0
    return dy / n, dx / n


def quantize_theta(theta: float) -> float:
    """Round to the 4-decimal precision of the template text format,
    staying inside [0, 2*pi)."""
    theta = theta % _TWO_PI
    t = round(theta, 4)
    if t >= round(_TWO_PI, 4):
        t = 0.0
    return t


def detect_minutiae(skeleton: np.ndarray, field: OrientationField) -> MinutiaeTemplate:
    """Crossing-number rule (1 = ending, 3 = bifurcation) plus filtering.

    Filtering drops background blocks, everything within BORDER_MARGIN of
    the foreground boundary, skeleton fragments below MIN_COMPONENT_PIXELS,
    opposite-kind pairs closer than MERGE_RADIUS (bridge and spur artifacts,
    both dropped), and same-kind duplicates within DUPLICATE_RADIUS.
    """
    h, w = skeleton.shape
    block = field.block_size
    cn = crossing_numbers(skeleton)

    fg_pixels = np.repeat(np.repeat(field.foreground, block, axis=0), block, axis=1)[:h, :w]
    # Distance to the nearest background or out-of-image pixel.
    padded = np.pad(fg_pixels, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]

    labels, _ = ndimage.label(skeleton, structure=np.ones((3, 3)))
    comp_sizes = np.bincount(labels.ravel())

    candidates = []
    for kind, cn_value in ((KIND_ENDING, 1), (KIND_BIFURCATION, 3)):
        ys, xs = np.nonzero(cn == cn_value)
        for y, x in zip(ys.tolist(), xs.tolist()):
            if dist[y, x] <= BORDER_MARGIN:
                continue
            if comp_sizes[labels[y, x]] < MIN_COMPONENT_PIXELS:
                continue
            by, bx = y // block, x // block
            if not field.foreground[by, bx]:
                continue
            phi = float(field.angles[by, bx])
            dy, dx = _local_centroid_dir(skeleton, y, x)
            # Disambiguate the undirected block orientation using the local
            # ridge mass direction.
            if math.cos(phi) * dx + math.sin(phi) * dy >= 0.0:
                theta = phi
            else:
                theta = phi + math.pi
            quality = float(np.clip(field.coherence[by, bx], 0.0, 1.0))
            candidates.append(Minutia(float(y), float(x), quantize_theta(theta),
                                      kind, round(quality, 4)))

    candidates.sort(key=lambda m: (m.y, m.x))
    if candidates:
        pts = np.array([(m.y, m.x) for m in candidates])
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        n = len(candidates)
        drop = np.zeros(n, dtype=bool)
        # Opposite-kind pairs within MERGE_RADIUS: drop both.
        for i in range(n):
            for j in range(i + 1, n):
                if d2[i, j] <= MERGE_RADIUS ** 2 and candidates[i].kind != candidates[j].kind:
                    drop[i] = drop[j] = True
        # Same-kind duplicates within DUPLICATE_RADIUS: keep the better one.
        for i in range(n):
            if drop[i]:
                continue
            for j in range(i + 1, n):
                if drop[j] or d2[i, j] > DUPLICATE_RADIUS ** 2:
                    continue
                if candidates[j].quality > candidates[i].quality:
                    drop[i] = True
                else:
                    drop[j] = True
        candidates = [m for i, m in enumerate(candidates) if not drop[i]]

    return make_template(candidates, (h, w))


def extract(img: GrayImage, block_size: int = DEFAULT_BLOCK_SIZE) -> MinutiaeTemplate:
    """Full pipeline: normalize, orient, binarize, thin, detect, filter."""
    norm = normalize(img)
    field = orientation_field(norm, block_size)
    skeleton = binarize_and_thin(norm)
    return detect_minutiae(skeleton, field)


# --- template text format (".mnt") ------------------------------------------

_KIND_CODE = {KIND_ENDING: "E", KIND_BIFURCATION: "B"}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def template_to_text(t: MinutiaeTemplate) -> str:
    lines = [f"MNT {len(t.minutiae)} {t.source_shape[0]} {t.source_shape[1]}"]
    for m in t.minutiae:
        lines.append(
            f"{m.x:.2f} {m.y:.2f} {m.theta:.4f} {_KIND_CODE[m.kind]} {m.quality:.4f}"
        )
    return "\n".join(lines) + "\n"


def template_from_text(text: str) -> MinutiaeTemplate:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("MNT "):
        raise DataError("not a minutiae template: missing MNT header")
    try:
        _, count, h, w = lines[0].split()
        count, h, w = int(count), int(h), int(w)
    except ValueError as exc:
        raise DataError(f"bad MNT header: {lines[0]!r}") from exc
    if len(lines) - 1 != count:
        raise DataError(f"MNT header promises {count} minutiae, found {len(lines) - 1}")
    minutiae = []
    for ln in lines[1:]:
        try:
            xs, ys, ts, kind, qs = ln.split()
            minutiae.append(Minutia(float(ys), float(xs), float(ts),
                                    _CODE_KIND[kind], float(qs)))
        except (ValueError, KeyError) as exc:
            raise DataError(f"bad minutia line: {ln!r}") from exc
    return make_template(minutiae, (h, w))


def save_template(t: MinutiaeTemplate, path: str | Path) -> None:
    Path(path).write_text(template_to_text(t))


def load_template(path: str | Path) -> MinutiaeTemplate:
    return template_from_text(Path(path).read_text())
