"""Contrast improvement by inverting an image, dehazing it with the dark
channel prior, and inverting back.

A dark, low-contrast image looks like a hazy one once inverted, so
dehazing the inverse spreads the histogram of the original.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import minimum_filter, uniform_filter

from .errors import InvalidArgumentError
from .images import RgbImage
from .tensor import Tensor


@dataclass(frozen=True)
class DehazeParams:
    """Dark-channel dehazing settings.

    ``guided_radius=None`` scales the refinement radius with the image:
    40 pixels at a 512-pixel short side.
    """

    patch_size: int = 15
    omega: float = 0.95
    t0: float = 0.1
    airlight_fraction: float = 0.001
    guided_radius: int | None = None
    guided_eps: float = 1e-3

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise InvalidArgumentError(f"patch_size must be odd and positive, got {self.patch_size}")
        if not 0.0 <= self.omega <= 1.0:
            raise InvalidArgumentError(f"omega must lie in [0, 1], got {self.omega}")
        if not 0.0 < self.t0 < 1.0:
            raise InvalidArgumentError(f"t0 must lie in (0, 1), got {self.t0}")
        if not 0.0 < self.airlight_fraction <= 1.0:
            raise InvalidArgumentError(f"airlight_fraction must lie in (0, 1], got {self.airlight_fraction}")
        if self.guided_radius is not None and self.guided_radius < 1:
            raise InvalidArgumentError(f"guided_radius must be >= 1, got {self.guided_radius}")
        if self.guided_eps <= 0:
            raise InvalidArgumentError("guided_eps must be positive")

    def radius_for(self, height: int, width: int) -> int:
        if self.guided_radius is not None:
            return self.guided_radius
        return max(1, int(round(40 * min(height, width) / 512)))


class DehazeWarning(UserWarning):
    pass


class DehazeResult(NamedTuple):
    image: RgbImage
    airlight: np.ndarray
    transmission: np.ndarray
    degenerate_airlight: bool


def _chw(img) -> np.ndarray:
    return img.data[0] if isinstance(img, RgbImage) else np.asarray(img, dtype=np.float64)


def invert(img: RgbImage) -> RgbImage:
    return RgbImage(Tensor(1.0 - img.data), img.linear)


def dark_channel(img, patch_size: int = 15) -> np.ndarray:
    """Per-pixel minimum over a ``patch_size`` square (clamped at the borders)
    of the minimum over color channels. Returns an ``(H, W)`` map."""
    if patch_size < 1 or patch_size % 2 == 0:
        raise InvalidArgumentError(f"patch_size must be odd and positive, got {patch_size}")
    chw = _chw(img)
    if patch_size > min(chw.shape[1:]):
        raise InvalidArgumentError(f"patch_size {patch_size} exceeds image extents {chw.shape[1:]}")
    # 'nearest' replicates border values, so the min equals the clamped-window min
    return minimum_filter(chw.min(axis=0), size=patch_size, mode="nearest")


def _box_mean(a: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    num = uniform_filter(a, size=size, mode="constant")
    den = uniform_filter(np.ones_like(a), size=size, mode="constant")
    return num / den


def guided_filter(p: np.ndarray, guide: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Gray-guide guided filter with clamped-window box means."""
    mean_i = _box_mean(guide, radius)
    mean_p = _box_mean(p, radius)
    cov_ip = _box_mean(guide * p, radius) - mean_i * mean_p
    var_i = _box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return _box_mean(a, radius) * guide + _box_mean(b, radius)


def estimate_airlight(chw: np.ndarray, dark: np.ndarray, fraction: float) -> np.ndarray:
    """Mean color of the brightest ``fraction`` of dark-channel pixels."""
    n = dark.size
    k = max(1, int(round(fraction * n)))
    idx = np.argsort(-dark.reshape(-1), kind="stable")[:k]
    return chw.reshape(3, -1)[:, idx].mean(axis=1)


def dehaze_details(img: RgbImage, p: DehazeParams = DehazeParams()) -> DehazeResult:
    chw = np.clip(_chw(img), 0.0, 1.0)
    _, H, W = chw.shape
    patch = min(p.patch_size, _largest_odd(min(H, W)))
    dark = dark_channel(chw, patch)
    A = estimate_airlight(chw, dark, p.airlight_fraction)
    degenerate = bool(np.any(A <= 0))
    if degenerate:
        warnings.warn("atmospheric light has a zero channel; falling back to A = 1", DehazeWarning, stacklevel=2)
        A = np.ones(3)
    t = 1.0 - p.omega * dark_channel(chw / A[:, None, None], patch)
    t = guided_filter(t, chw.mean(axis=0), p.radius_for(H, W), p.guided_eps)
    t = np.maximum(t, p.t0)
    # I + (I - A)(1/t - 1) == (I - A)/t + A, but exact when t == 1
    J = chw + (chw - A[:, None, None]) * (1.0 / t - 1.0)
    out = RgbImage(Tensor(np.clip(J, 0.0, 1.0)[None]), img.linear)
    return DehazeResult(out, A, t, degenerate)


def _largest_odd(n: int) -> int:
    return n if n % 2 else n - 1


def dehaze(img: RgbImage, p: DehazeParams = DehazeParams()) -> RgbImage:
    """Dark-channel-prior haze removal with guided-filter transmission refinement."""
    return dehaze_details(img, p).image


def enhance_contrast(img: RgbImage, p: DehazeParams = DehazeParams()) -> RgbImage:
    out = invert(dehaze(invert(img.clamped()), p))
    return out.clamped()
