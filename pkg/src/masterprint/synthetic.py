"""Synthetic fingerprint-like data: ridge images, identity galleries, and a
demo generator model. Stands in for restricted fingerprint datasets so the
whole pipeline can run from in-repo fixtures.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import generator as gen
from .image import GrayImage, save_image

DEFAULT_PERIOD = 8.0


def parallel_ridges(shape: tuple[int, int], angle: float, period: float = DEFAULT_PERIOD,
                    amplitude: float = 100.0, phase: float = 0.0) -> GrayImage:
    """Straight ridge stripes running along ``angle`` (radians from +x)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # Intensity varies along the normal of the ridge direction.
    proj = xx * math.cos(angle + 0.5 * math.pi) + yy * math.sin(angle + 0.5 * math.pi)
    vals = 128.0 - amplitude * np.cos(2.0 * math.pi * proj / period + phase)
    return GrayImage(np.clip(np.rint(vals), 0, 255).astype(np.uint8))


def _smooth_field(shape, rng, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return f / (np.abs(f).max() + 1e-12)


def smooth_orientation(shape: tuple[int, int], rng: np.random.Generator,
                       sigma: float = 24.0) -> np.ndarray:
    """Smooth random orientation field in [0, pi) via doubled-angle vectors."""
    u = _smooth_field(shape, rng, sigma)
    v = _smooth_field(shape, rng, sigma)
    return np.mod(0.5 * np.arctan2(v, u), math.pi)


def _gabor_kernel(angle: float, period: float, sigma: float, size: int) -> np.ndarray:
    half = size // 2
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    envelope = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    proj = xx * math.cos(angle + 0.5 * math.pi) + yy * math.sin(angle + 0.5 * math.pi)
    k = envelope * np.cos(2.0 * math.pi * proj / period)
    return k - k.mean() * envelope / envelope.mean()


def render_ridge_pattern(orientation: np.ndarray, rng: np.random.Generator,
                         period: float = DEFAULT_PERIOD, iterations: int = 4,
                         n_kernels: int = 12) -> GrayImage:
    """Grow a ridge pattern that follows ``orientation`` by repeatedly
    filtering seeded noise with orientation-matched band-pass kernels."""
    shape = orientation.shape
    kernels = [_gabor_kernel(a, period, period * 0.6, int(period) * 2 + 1)
               for a in np.linspace(0.0, math.pi, n_kernels, endpoint=False)]
    idx = np.mod(np.rint(orientation / math.pi * n_kernels).astype(np.int64), n_kernels)
    img = rng.standard_normal(shape)
    for _ in range(iterations):
        stack = np.stack([ndimage.convolve(img, k, mode="reflect") for k in kernels])
        img = np.take_along_axis(stack, idx[None, :, :], axis=0)[0]
        img = np.tanh(img / (np.abs(img).std() + 1e-12))
    vals = 128.0 - 110.0 * img  # ridges dark
    return GrayImage(np.clip(np.rint(vals), 0, 255).astype(np.uint8))


def identity_master(seed: int, size: int = 192, period: float = DEFAULT_PERIOD) -> GrayImage:
    """Full-size print for one synthetic identity."""
    rng = np.random.default_rng(seed)
    orientation = smooth_orientation((size, size), rng, sigma=size / 7.0)
    return render_ridge_pattern(orientation, rng, period=period)


def identity_partials(master: GrayImage, k: int, partial_size: int,
                      rng: np.random.Generator, noise_std: float = 5.0) -> list[GrayImage]:
    """k partial views: shifted crops of the master with mild sensor noise."""
    h, w = master.shape
    max_y = h - partial_size
    max_x = w - partial_size
    out = []
    for _ in range(k):
        y0 = int(rng.integers(0, max_y + 1))
        x0 = int(rng.integers(0, max_x + 1))
        crop = master.pixels[y0:y0 + partial_size, x0:x0 + partial_size].astype(np.float64)
        crop = crop + rng.normal(0.0, noise_std, size=crop.shape)
        out.append(GrayImage(np.clip(np.rint(crop), 0, 255).astype(np.uint8)))
    return out


def write_gallery(root: str | Path, n_identities: int, k: int = 12,
                  partial_size: int = 128, seed: int = 0,
                  master_size: int | None = None) -> Path:
    """Write a synthetic identity-per-directory gallery of PNG partials."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    master_size = master_size or partial_size + 64
    rng = np.random.default_rng(seed)
    for i in range(n_identities):
        ident = f"id{i:04d}"
        master = identity_master(int(rng.integers(0, 2 ** 31)), size=master_size)
        for j, img in enumerate(identity_partials(master, k, partial_size, rng)):
            save_image(img, root / ident / f"p{j:02d}.png")
    return root


def gallery_images(n_identities: int, k: int = 12, partial_size: int = 128,
                   seed: int = 0, master_size: int | None = None
                   ) -> list[tuple[str, list[GrayImage]]]:
    """In-memory equivalent of write_gallery (same layout, no files)."""
    master_size = master_size or partial_size + 64
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_identities):
        master = identity_master(int(rng.integers(0, 2 ** 31)), size=master_size)
        out.append((f"id{i:04d}", identity_partials(master, k, partial_size, rng)))
    return out


def white_noise_image(shape: tuple[int, int], seed: int) -> GrayImage:
    rng = np.random.default_rng(seed)
    return GrayImage(rng.integers(0, 256, size=shape, dtype=np.uint8).astype(np.uint8))


# --- demo generator model ----------------------------------------------------

def _gabor_atom(size: int, cy: float, cx: float, angle: float, period: float,
                sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy -= cy
    xx -= cx
    envelope = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    proj = xx * math.cos(angle + 0.5 * math.pi) + yy * math.sin(angle + 0.5 * math.pi)
    return envelope * np.cos(2.0 * math.pi * proj / period)


def demo_generator_model(seed: int = 0, size: int = 96, grid: int = 4,
                         n_angles: int = 3, period: float = 9.0) -> gen.GeneratorModel:
    """Small generator whose latent entries blend oriented ridge atoms.

    The dense layer holds one Gabor atom per latent coordinate on a
    grid x grid layout with n_angles orientations each; a smoothing conv
    and tanh finish the image. Latent dimension = grid * grid * n_angles.
    """
    rng = np.random.default_rng(seed)
    atoms = []
    spacing = size / grid
    sigma = spacing * 0.75
    for gy in range(grid):
        for gx in range(grid):
            cy = (gy + 0.5) * spacing + rng.normal(0, 1.5)
            cx = (gx + 0.5) * spacing + rng.normal(0, 1.5)
            base = rng.uniform(0, math.pi)
            for a in range(n_angles):
                angle = (base + a * math.pi / n_angles) % math.pi
                atoms.append(_gabor_atom(size, cy, cx, angle, period, sigma))
    basis = np.stack([a.reshape(-1) for a in atoms], axis=1)  # (size*size, latent)
    latent_dim = basis.shape[1]

    smooth = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)
    smooth = (smooth / smooth.sum() * 1.6).reshape(1, 1, 3, 3)

    layers = [
        gen.dense(latent_dim, 1, size, size, basis.astype(np.float32),
                  np.zeros(size * size, dtype=np.float32)),
        gen.conv2d(smooth.astype(np.float32), np.zeros(1, dtype=np.float32)),
        gen.activation(gen.ACT_TANH),
    ]
    return gen.build_model(latent_dim, layers)
