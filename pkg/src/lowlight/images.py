"""RGB image container and file I/O (PNG, binary PPM, float ``.npy``)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidShapeError
from .tensor import Tensor

IMAGE_SUFFIXES = (".png", ".ppm", ".npy")


@dataclass
class RgbImage:
    """A ``(1, 3, H, W)`` image tensor, sRGB-encoded unless ``linear``."""

    tensor: Tensor
    linear: bool = False

    def __post_init__(self):
        if not isinstance(self.tensor, Tensor):
            self.tensor = Tensor(self.tensor)
        shape = self.tensor.shape
        if len(shape) != 4 or shape[0] != 1 or shape[1] != 3:
            raise InvalidShapeError(f"RgbImage expects shape (1, 3, H, W), got {shape}")

    @classmethod
    def from_hwc(cls, array, linear: bool = False) -> "RgbImage":
        a = np.asarray(array, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 3:
            raise InvalidShapeError(f"expected an H x W x 3 array, got {a.shape}")
        return cls(Tensor(a.transpose(2, 0, 1)[None]), linear)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def height(self) -> int:
        return self.tensor.shape[2]

    @property
    def width(self) -> int:
        return self.tensor.shape[3]

    def to_hwc(self) -> np.ndarray:
        return self.data[0].transpose(1, 2, 0)

    def clamped(self) -> "RgbImage":
        return RgbImage(Tensor(np.clip(self.data, 0.0, 1.0)), self.linear)

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.to_hwc(), 0.0, 1.0) * 255.0).astype(np.uint8)


def lightness(img: RgbImage) -> np.ndarray:
    """Per-pixel lightness ``(R + G + B) / 3`` of the clamped image, shape ``(H, W)``."""
    return np.clip(img.data[0], 0.0, 1.0).mean(axis=0)


def mean_lightness(img: RgbImage) -> float:
    return float(lightness(img).mean())


def lightness_histogram(img: RgbImage, bins: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Counts and bin edges of the lightness over ``[0, 1]``."""
    return np.histogram(lightness(img), bins=bins, range=(0.0, 1.0))


def read_image(path) -> RgbImage:
    """Load PNG/PPM (8 or 16 bit) or a float ``.npy`` H x W x 3 array."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return RgbImage.from_hwc(np.load(path))
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            a = np.asarray(im, dtype=np.float64) / 65535.0
            return RgbImage.from_hwc(np.repeat(a[..., None], 3, axis=2))
        a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return RgbImage.from_hwc(a)


def write_image(img: RgbImage, path) -> None:
    """Write the clamped image; the format follows the suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        np.save(path, np.clip(img.to_hwc(), 0.0, 1.0))
        return
    pil = Image.fromarray(img.to_uint8())
    if suffix == ".ppm":
        pil.save(path, format="PPM")
    else:
        pil.save(path, format="PNG")
