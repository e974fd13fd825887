"""8-bit grayscale image container plus PNG/PGM file I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image; ``pixels`` is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if p.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        p.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @staticmethod
    def from_array(arr: np.ndarray) -> "GrayImage":
        """Build from any numeric array already in the [0, 255] range."""
        a = np.asarray(arr)
        if a.dtype != np.uint8:
            if a.size and (a.min() < 0 or a.max() > 255):
                raise ValueError("intensities outside [0, 255]")
            a = a.astype(np.uint8)
        return GrayImage(np.ascontiguousarray(a))


def load_image(path: str | Path) -> GrayImage:
    """Load a PNG or PGM file as 8-bit grayscale."""
    try:
        with Image.open(path) as im:
            return GrayImage(np.asarray(im.convert("L"), dtype=np.uint8).copy())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(img: GrayImage, path: str | Path) -> None:
    """Write as PNG or binary PGM depending on the file extension."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.pixels, mode="L").save(path)
