"""Training objective: l1, (MS-)SSIM, frozen-feature perceptual loss, and PSNR.

The objective is ``alpha * pixel + (1 - alpha) * feature`` with
``pixel = beta * l1 + (1 - beta) * (1 - ms_ssim)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn
from .errors import FormatError, InvalidArgumentError, InvalidShapeError
from .tensor import Tensor, no_grad

PSNR_CAP = 99.0


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters.

    ``alpha`` weights the pixel term against the feature term, ``beta``
    weights l1 against the MS-SSIM loss inside the pixel term.
    """

    alpha: float = 0.9
    beta: float = 0.99
    msssim_scales: int = 3
    c1: float = 0.01**2
    c2: float = 0.03**2
    window: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise InvalidArgumentError(f"alpha and beta must lie in [0, 1], got {self.alpha}, {self.beta}")
        if self.msssim_scales < 1:
            raise InvalidArgumentError(f"msssim_scales must be >= 1, got {self.msssim_scales}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise InvalidArgumentError("c1 and c2 must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidArgumentError(f"window must be a positive odd size, got {self.window}")


def gaussian_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian weights of shape ``(size, size)``."""
    g = gaussian_1d(size, sigma)
    return np.outer(g, g)


def _check_pair(pred: Tensor, target: Tensor, op: str) -> None:
    if pred.shape != target.shape:
        raise InvalidShapeError(f"{op}: prediction {pred.shape} and target {target.shape} differ")


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if hasattr(x, "tensor"):
        return x.tensor
    return Tensor(x)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference over all elements."""
    pred, target = _t(pred), _t(target)
    _check_pair(pred, target, "l1_loss")
    return (pred - target).abs().mean()


class SSIMResult(NamedTuple):
    ssim_map: Tensor
    luminance: Tensor
    contrast_structure: Tensor
    mean: Tensor


def ssim(pred, target, cfg: LossConfig = LossConfig()) -> SSIMResult:
    """Gaussian-windowed SSIM on ``(B, C, H, W)`` tensors, 'valid' extent.

    The luminance and contrast-structure maps are returned separately
    because MS-SSIM combines them across scales.
    """
    x, y = _t(pred), _t(target)
    _check_pair(x, y, "ssim")
    if x.ndim != 4:
        raise InvalidShapeError(f"ssim: expected NCHW tensors, got {x.shape}")
    if min(x.shape[2:]) < cfg.window:
        raise InvalidShapeError(f"ssim: image {x.shape[2]}x{x.shape[3]} smaller than window {cfg.window}")
    g = gaussian_1d(cfg.window, cfg.sigma)

    def blur(t):
        return nn.separable_filter2d(t, g, g)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    lum = (mu_xy * 2.0 + cfg.c1) / (mu_xx + mu_yy + cfg.c1)
    cs = (cov * 2.0 + cfg.c2) / (var_x + var_y + cfg.c2)
    smap = lum * cs
    return SSIMResult(smap, lum, cs, smap.mean())


def max_msssim_scales(height: int, width: int, window: int = 11) -> int:
    """Largest M with ``min(H, W) >= window * 2**(M - 1)`` (0 if none)."""
    side = min(height, width)
    m = 0
    while side >= window * 2**m:
        m += 1
    return m


def _even(x: Tensor) -> Tensor:
    h, w = x.shape[2] - x.shape[2] % 2, x.shape[3] - x.shape[3] % 2
    return x if (h, w) == x.shape[2:] else nn.crop(x, h, w)


def ms_ssim(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """Multi-scale SSIM with unit exponents.

    Product of the mean contrast-structure term at scales 1..M-1 and the
    mean full SSIM (luminance x contrast-structure) at the coarsest scale M,
    with 2x2 mean pooling between scales. ``M = 1`` is plain mean SSIM.
    """
    x, y = _t(pred), _t(target)
    _check_pair(x, y, "ms_ssim")
    m = cfg.msssim_scales
    h, w = x.shape[2:]
    feasible = max_msssim_scales(h, w, cfg.window)
    if m > feasible:
        raise InvalidArgumentError(
            f"ms_ssim: {h}x{w} image supports at most {feasible} scales with window {cfg.window}, got M={m}"
        )
    value = None
    for i in range(m):
        res = ssim(x, y, cfg)
        term = res.mean if i == m - 1 else res.contrast_structure.mean()
        value = term if value is None else value * term
        if i < m - 1:
            x, y = nn.avgpool2(_even(x)), nn.avgpool2(_even(y))
    return value


def msssim_loss(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    return 1.0 - ms_ssim(pred, target, cfg)


def pixel_loss(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    l1 = _maybe(cfg.beta > 0, lambda: l1_loss(pred, target))
    ms = _maybe(cfg.beta < 1, lambda: msssim_loss(pred, target, cfg))
    return _combine(cfg.beta, l1, ms)


# feature extractor ----------------------------------------------------

LLFX_MAGIC = b"LLFX"
LLFX_VERSION = 1
_LAYER_HEADER = struct.Struct("<IIII")


class FeatureExtractor:
    """Frozen two-block conv net producing ``(B, 128, H/4, W/4)`` features.

    Block k is two 3x3 convs (each followed by ReLU) and a 2x2 max-pool;
    widths default to 64 and 128. Parameters never carry gradients.

    Parameters
    ----------
    layers : list of (weight, bias) arrays, optional
        Explicit weights, e.g. converted from a pretrained classifier.
    seed : int
        Seed for He-normal initialization when ``layers`` is None.
    widths : tuple of int
        Channel widths of the two blocks.
    input_norm : (mean, std), optional
        Per-channel input standardization, applied as a fixed 1x1 conv.
    """

    def __init__(self, layers=None, seed: int = 0, widths=(64, 128), input_norm=None):
        if layers is None:
            layers = self._he_layers(seed, widths)
        expected = self._shapes(layers[0][0].shape[0], layers[2][0].shape[0]) if len(layers) == 4 else None
        if expected is None or [tuple(np.shape(w)) for w, _ in layers] != expected:
            raise InvalidShapeError(f"feature extractor needs 4 conv layers shaped {expected}")
        self.layers = [(Tensor(w), Tensor(b)) for w, b in layers]
        self.widths = (self.layers[0][0].shape[0], self.layers[2][0].shape[0])
        self.norm = None
        if input_norm is not None:
            mean, std = (np.asarray(v, dtype=np.float64) for v in input_norm)
            self.norm = (Tensor(np.diag(1.0 / std)[:, :, None, None]), Tensor(-mean / std))

    @staticmethod
    def _shapes(w1: int, w2: int):
        return [(w1, 3, 3, 3), (w1, w1, 3, 3), (w2, w1, 3, 3), (w2, w2, 3, 3)]

    @classmethod
    def _he_layers(cls, seed, widths):
        rng = np.random.default_rng(seed)
        out = []
        for shape in cls._shapes(*widths):
            fan_in = shape[1] * shape[2] * shape[3]
            out.append((rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape), np.zeros(shape[0])))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise InvalidShapeError(f"feature extractor expects (B, 3, H, W), got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise InvalidShapeError(f"feature extractor needs extents divisible by 4, got {x.shape[2:]}")
        if self.norm is not None:
            x = nn.conv2d(x, *self.norm)
        for i, (w, b) in enumerate(self.layers):
            x = nn.relu(nn.conv2d(x, w, b, stride=1, padding=1))
            if i % 2 == 1:
                x = nn.maxpool2(x)
        return x

    def to_bytes(self) -> bytes:
        chunks = [LLFX_MAGIC, struct.pack("<H", LLFX_VERSION)]
        for w, b in self.layers:
            chunks.append(_LAYER_HEADER.pack(*w.shape))
            chunks.append(w.data.astype("<f4").tobytes())
            chunks.append(b.data.astype("<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf: bytes, input_norm=None) -> "FeatureExtractor":
        if buf[:4] != LLFX_MAGIC:
            raise FormatError(f"LLFX: bad magic {buf[:4]!r}")
        if len(buf) < 6 or struct.unpack_from("<H", buf, 4)[0] != LLFX_VERSION:
            raise FormatError("LLFX: unsupported version")
        pos, layers = 6, []
        while pos < len(buf):
            if pos + _LAYER_HEADER.size > len(buf):
                raise FormatError("LLFX: truncated layer header")
            o, i, kh, kw = _LAYER_HEADER.unpack_from(buf, pos)
            pos += _LAYER_HEADER.size
            nw = o * i * kh * kw
            end = pos + 4 * (nw + o)
            if end > len(buf):
                raise FormatError("LLFX: truncated layer payload")
            w = np.frombuffer(buf, "<f4", nw, pos).reshape(o, i, kh, kw).astype(np.float64)
            b = np.frombuffer(buf, "<f4", o, pos + 4 * nw).astype(np.float64)
            layers.append((w, b))
            pos = end
        return cls(layers, input_norm=input_norm)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, input_norm=None) -> "FeatureExtractor":
        return cls.from_bytes(Path(path).read_bytes(), input_norm)


def feature_loss(pred, target, fx: FeatureExtractor) -> Tensor:
    """Mean squared difference of extractor activations; the target side is
    evaluated off the tape."""
    pred, target = _t(pred), _t(target)
    _check_pair(pred, target, "feature_loss")
    with no_grad():
        ft = fx(target)
    d = fx(pred) - ft
    return (d * d).mean()


# combined objective ---------------------------------------------------


class LossTerms(NamedTuple):
    l1: Tensor
    msssim: Tensor
    feature: Tensor
    pixel: Tensor
    total: Tensor


def loss_terms(pred, target, cfg: LossConfig, fx: FeatureExtractor) -> LossTerms:
    """All components of the objective; terms with zero weight are computed
    for reporting only and stay off the gradient path."""
    pred, target = _t(pred), _t(target)
    beta, alpha = cfg.beta, cfg.alpha
    l1 = _maybe(beta * alpha > 0, lambda: l1_loss(pred, target))
    ms = _maybe((1 - beta) * alpha > 0, lambda: msssim_loss(pred, target, cfg))
    feat = _maybe(alpha < 1, lambda: feature_loss(pred, target, fx))
    pixel = _combine(beta, l1, ms)
    total = _combine(alpha, pixel, feat)
    return LossTerms(l1, ms, feat, pixel, total)


def _maybe(on_tape: bool, fn) -> Tensor:
    if on_tape:
        return fn()
    with no_grad():
        return fn()


def _combine(weight: float, a: Tensor, b: Tensor) -> Tensor:
    return a * weight + b * (1.0 - weight)


def total_loss(pred, target, cfg: LossConfig, fx: FeatureExtractor) -> Tensor:
    return loss_terms(pred, target, cfg, fx).total


def psnr(pred, target, cap: float | None = PSNR_CAP) -> float:
    """``10 log10(1 / MSE)`` in dB for signals in [0, 1].

    Identical inputs give ``inf``, reported as ``cap`` unless ``cap`` is None.
    """
    p = np.asarray(_t(pred).data)
    t = np.asarray(_t(target).data)
    if p.shape != t.shape:
        raise InvalidShapeError(f"psnr: shapes {p.shape} and {t.shape} differ")
    mse = float(np.mean((p - t) ** 2))
    value = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return value if cap is None else min(value, cap)
