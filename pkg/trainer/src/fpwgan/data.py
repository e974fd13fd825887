"""Training data: directory ingestion with per-epoch random crops, plus a
self-contained synthetic ridge-texture source for desk-scale runs.
Batches are float32 tensors in [-1, 1], shape (B, 1, crop, crop).
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = (".png", ".pgm")


def load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def ridge_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Wavy oriented stripes: a cheap stand-in for partial-print texture."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    angle = rng.uniform(0, math.pi)
    period = rng.uniform(7.0, 11.0)
    warp = rng.uniform(2.0, 6.0)
    phase = rng.uniform(0, 2 * math.pi)
    proj = (xx * math.cos(angle) + yy * math.sin(angle)
            + warp * np.sin(2 * math.pi * (xx * math.sin(angle) - yy * math.cos(angle))
                            / (6.0 * period)))
    vals = 128.0 - 100.0 * np.cos(2 * math.pi * proj / period + phase)
    vals += rng.normal(0, 6.0, size=vals.shape)
    return np.clip(np.rint(vals), 0, 255).astype(np.uint8)


class Dataset:
    """Full-size source images: every selection takes a fresh seeded random
    crop, so crops differ across epochs but reproduce for the same
    (seed, epoch, index)."""

    def __init__(self, images: list[np.ndarray], crop_size: int, seed: int):
        if not images:
            raise ValueError("dataset has no usable images")
        self.images = images
        self.crop_size = crop_size
        self.seed = seed

    def __len__(self) -> int:
        return len(self.images)

    def crop_offsets(self, epoch: int, index: int) -> tuple[int, int]:
        img = self.images[index % len(self.images)]
        h, w = img.shape
        rng = np.random.default_rng((self.seed, epoch, index))
        y0 = int(rng.integers(0, h - self.crop_size + 1))
        x0 = int(rng.integers(0, w - self.crop_size + 1))
        return y0, x0

    def sample(self, epoch: int, index: int) -> np.ndarray:
        img = self.images[index % len(self.images)]
        y0, x0 = self.crop_offsets(epoch, index)
        c = img[y0:y0 + self.crop_size, x0:x0 + self.crop_size]
        return c.astype(np.float32) / 127.5 - 1.0

    def batches(self, batch_size: int, seed: int):
        """Endless stream of shuffled batches; one epoch = one pass."""
        order_rng = np.random.default_rng(seed)
        epoch = 0
        while True:
            order = order_rng.permutation(len(self.images))
            for start in range(0, len(order) - batch_size + 1, batch_size):
                idx = order[start:start + batch_size]
                arr = np.stack([self.sample(epoch, int(i)) for i in idx])
                yield torch.from_numpy(arr).unsqueeze(1)
            epoch += 1


def prepare_dataset(source_dir: str | Path | None, crop_size: int, seed: int,
                    synthetic_images: int = 512) -> Dataset:
    """Load a directory tree of grayscale images (any nesting), or build the
    synthetic ridge-texture set when no directory is given. Images smaller
    than the crop are skipped with a warning."""
    images: list[np.ndarray] = []
    if source_dir is None:
        rng = np.random.default_rng(seed)
        side = crop_size + crop_size // 4
        images = [ridge_texture(side, rng) for _ in range(synthetic_images)]
    else:
        source_dir = Path(source_dir)
        files = sorted(p for p in source_dir.rglob("*")
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        for f in files:
            try:
                img = load_gray(f)
            except OSError as exc:
                print(f"warning: skipping unreadable {f}: {exc}", file=sys.stderr)
                continue
            if img.shape[0] < crop_size or img.shape[1] < crop_size:
                print(f"warning: skipping undersized {f} {img.shape}", file=sys.stderr)
                continue
            images.append(img)
    return Dataset(images, crop_size, seed)
