"""Procedural clean scenes and paired short/long exposure datasets, used in
place of a captured RAW dataset."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .images import RgbImage
from .raw import CFA, NoiseParams, exposure_ratio, synthesize_pair
from .tensor import Tensor
from .train import TrainingPair


def smooth_scene(height: int, width: int, seed: int = 0, blobs: int = 6, edges: int = 2) -> RgbImage:
    """A gamma-encoded scene built from a color gradient, Gaussian blobs and
    a few soft-edged rectangles. Values stay inside ``[0.05, 0.95]``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    img = np.empty((3, height, width))
    for c in range(3):
        a, b, base = rng.uniform(-0.3, 0.3, 3)
        img[c] = 0.45 + 0.2 * base + a * (yy - 0.5) + b * (xx - 0.5)
    for _ in range(blobs):
        cy, cx = rng.uniform(0, 1, 2)
        s = rng.uniform(0.08, 0.25)
        amp = rng.uniform(-0.35, 0.35, 3)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img += amp[:, None, None] * g
    for _ in range(edges):
        y0, x0 = rng.uniform(0, 0.7, 2)
        y1, x1 = y0 + rng.uniform(0.15, 0.3), x0 + rng.uniform(0.15, 0.3)
        soft = 0.01
        m = (
            _step((yy - y0) / soft) * _step((y1 - yy) / soft)
            * _step((xx - x0) / soft) * _step((x1 - xx) / soft)
        )
        img += rng.uniform(-0.25, 0.25, 3)[:, None, None] * m
    img = 0.05 + 0.9 * np.clip(img, 0.0, 1.0)
    return RgbImage(Tensor(img[None]))


def _step(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(z))


def dark_scene(height: int, width: int, seed: int = 0, gain: float = 0.35) -> RgbImage:
    """A scene compressed toward black, for exercising contrast enhancement."""
    base = smooth_scene(height, width, seed)
    return RgbImage(Tensor((base.data - 0.05) * gain + 0.02))


def make_pairs(
    n: int,
    size: int = 64,
    cfa: CFA | None = None,
    ratio: float = 100.0,
    noise: NoiseParams = NoiseParams(),
    seed: int = 0,
    reference_exposure_s: float = 10.0,
) -> list[TrainingPair]:
    """``n`` synthetic (short exposure RAW, clean target) pairs.

    The amplification of each pair is the exposure ratio recovered from the
    frame metadata, as it would be for captured data.
    """
    cfa = cfa or CFA.bayer()
    if n < 1:
        raise InvalidArgumentError(f"need at least one pair, got {n}")
    if size % cfa.period:
        raise InvalidArgumentError(f"size {size} must be a multiple of {cfa.period} for {cfa.kind}")
    seeds = np.random.SeedSequence(seed).spawn(n)
    pairs = []
    for ss in seeds:
        scene_seed, noise_seed = ss.generate_state(2)
        clean = smooth_scene(size, size, int(scene_seed))
        raw, target = synthesize_pair(clean, cfa, ratio, noise, int(noise_seed), reference_exposure_s=reference_exposure_s)
        pairs.append(TrainingPair(raw, target, exposure_ratio(reference_exposure_s, raw.exposure_s)))
    return pairs
