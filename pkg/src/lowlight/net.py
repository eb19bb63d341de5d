"""Encoder-decoder restoration network (packed RAW -> sRGB) and the LLCK
checkpoint container."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import FormatError, InvalidArgumentError, InvalidShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class NetSpec:
    """Architecture descriptor.

    ``depth`` encoder levels of two 3x3 convs, widths doubling from
    ``base_width``; ``depth - 1`` decoder levels; a 1x1 head producing
    ``3 * r**2`` channels that a pixel shuffle turns into RGB at ``r`` times
    the packed resolution.
    """

    in_channels: int = 4
    depth: int = 5
    base_width: int = 32
    upsample_factor: int = 2

    def __post_init__(self):
        if self.depth < 2:
            raise InvalidArgumentError(f"depth must be >= 2, got {self.depth}")
        if self.in_channels < 1 or self.base_width < 1 or self.upsample_factor < 1:
            raise InvalidArgumentError("in_channels, base_width and upsample_factor must be positive")

    @classmethod
    def full(cls, cfa_kind: str = "bayer") -> "NetSpec":
        return cls.for_cfa(cfa_kind, depth=5, base_width=32)

    @classmethod
    def desk(cls, cfa_kind: str = "bayer", depth: int = 3, base_width: int = 8) -> "NetSpec":
        return cls.for_cfa(cfa_kind, depth=depth, base_width=base_width)

    @classmethod
    def for_cfa(cls, cfa_kind: str, depth: int, base_width: int) -> "NetSpec":
        if cfa_kind == "bayer":
            return cls(4, depth, base_width, 2)
        if cfa_kind == "xtrans":
            return cls(9, depth, base_width, 3)
        raise InvalidArgumentError(f"unknown CFA kind {cfa_kind!r}")

    @property
    def out_channels_pre_shuffle(self) -> int:
        return 3 * self.upsample_factor**2

    @property
    def divisor(self) -> int:
        """Packed extents must be multiples of this."""
        return 2 ** (self.depth - 1)

    def widths(self) -> list[int]:
        return [self.base_width * 2**i for i in range(self.depth)]

    def layer_shapes(self) -> list[tuple[str, str, tuple]]:
        """``(name, kind, weight_shape)`` in traversal order.

        ``kind`` is ``conv`` (3x3), ``up`` (2x2 stride-2 transpose conv) or
        ``head`` (1x1).
        """
        w = self.widths()
        out = []
        cin = self.in_channels
        for i, c in enumerate(w):
            out.append((f"enc{i + 1}a", "conv", (c, cin, 3, 3)))
            out.append((f"enc{i + 1}b", "conv", (c, c, 3, 3)))
            cin = c
        for i in reversed(range(self.depth - 1)):
            out.append((f"up{i + 1}", "up", (w[i + 1], w[i], 2, 2)))
            out.append((f"dec{i + 1}a", "conv", (w[i], 2 * w[i], 3, 3)))
            out.append((f"dec{i + 1}b", "conv", (w[i], w[i], 3, 3)))
        out.append(("head", "head", (self.out_channels_pre_shuffle, w[0], 1, 1)))
        return out

    def parameter_count(self) -> int:
        total = 0
        for _, kind, shape in self.layer_shapes():
            n_out = shape[1] if kind == "up" else shape[0]
            total += math.prod(shape) + n_out
        return total


@dataclass
class Layer:
    name: str
    kind: str
    weight: Tensor
    bias: Tensor


@dataclass
class NetParams:
    spec: NetSpec
    layers: list[Layer]
    seed: int | None = None

    def parameters(self) -> list[Tensor]:
        """Flat list ``[w0, b0, w1, b1, ...]`` in traversal order."""
        return [t for layer in self.layers for t in (layer.weight, layer.bias)]

    def conv_layer_count(self) -> int:
        return len(self.layers)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "NetParams":
        layers = [
            Layer(l.name, l.kind, Tensor(l.weight.data.copy(), True, l.weight.name), Tensor(l.bias.data.copy(), True, l.bias.name))
            for l in self.layers
        ]
        return NetParams(self.spec, layers, self.seed)


# Outputs start at mid-gray instead of black; at lr 1e-4 Adam would need
# thousands of steps to move the head bias that far.
HEAD_BIAS_INIT = 0.5


def build(spec: NetSpec, seed: int = 0) -> NetParams:
    """Kernels uniform in ``+-1/sqrt(fan_in)`` and zero biases, except the head:
    zero kernel and ``HEAD_BIAS_INIT`` bias, so the untrained net emits flat
    mid-gray. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for name, kind, shape in spec.layer_shapes():
        fan_in = shape[0 if kind == "up" else 1] * shape[2] * shape[3]
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=shape)
        if kind == "head":
            w[...] = 0.0
        n_out = shape[1] if kind == "up" else shape[0]
        b = np.full(n_out, HEAD_BIAS_INIT if kind == "head" else 0.0)
        layers.append(Layer(name, kind, Tensor(w, True, f"{name}.weight"), Tensor(b, True, f"{name}.bias")))
    return NetParams(spec, layers, seed)


def forward(params: NetParams, packed: Tensor) -> Tensor:
    """Run the network on a ``(1, C, h, w)`` packed tensor.

    Returns the unclamped ``(1, 3, r*h, r*w)`` prediction.
    """
    spec = params.spec
    if packed.ndim != 4 or packed.shape[1] != spec.in_channels:
        raise InvalidShapeError(f"expected (B, {spec.in_channels}, h, w) input, got {packed.shape}")
    d = spec.divisor
    if packed.shape[2] % d or packed.shape[3] % d:
        raise InvalidShapeError(
            f"packed extents {packed.shape[2]}x{packed.shape[3]} must be divisible by {d} (2**(depth-1))"
        )
    layers = iter(params.layers)

    def conv(x):
        layer = next(layers)
        return nn.leaky_relu(nn.conv2d(x, layer.weight, layer.bias, stride=1, padding=1))

    skips = []
    x = packed
    for level in range(spec.depth):
        x = conv(conv(x))
        if level < spec.depth - 1:
            skips.append(x)
            x = nn.maxpool2(x)
    for skip in reversed(skips):
        up = next(layers)
        x = nn.transpose_conv2d(x, up.weight, up.bias, stride=2)
        x = conv(conv(nn.concat_channels(x, skip)))
    head = next(layers)
    x = nn.conv2d(x, head.weight, head.bias, stride=1, padding=0)
    return nn.pixel_shuffle(x, spec.upsample_factor)


# LLCK checkpoint ------------------------------------------------------

LLCK_MAGIC = b"LLCK"
LLCK_VERSION = 1
_HEAD = struct.Struct("<4sHIIIIIQB")


@dataclass
class Checkpoint:
    """Network parameters plus the optimizer state needed to resume."""

    params: NetParams
    epoch: int = 0
    adam_step: int = 0
    adam_m: list[np.ndarray] | None = None
    adam_v: list[np.ndarray] | None = None


def encode_checkpoint(ck: Checkpoint) -> bytes:
    spec = ck.params.spec
    has_moments = ck.adam_m is not None and ck.adam_v is not None
    chunks = [
        _HEAD.pack(
            LLCK_MAGIC,
            LLCK_VERSION,
            spec.in_channels,
            spec.depth,
            spec.base_width,
            spec.upsample_factor,
            ck.epoch,
            ck.adam_step,
            1 if has_moments else 0,
        )
    ]
    params = ck.params.parameters()
    if has_moments:
        for bufs in (ck.adam_m, ck.adam_v):
            chunks.extend(np.asarray(b, dtype="<f8").tobytes() for b in bufs)
    chunks.extend(p.data.astype("<f8").tobytes() for p in params)
    return b"".join(chunks)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < _HEAD.size:
        raise FormatError("LLCK: truncated header")
    magic, version, cin, depth, base, r, epoch, step, has_m = _HEAD.unpack_from(buf)
    if magic != LLCK_MAGIC:
        raise FormatError(f"LLCK: bad magic {magic!r}")
    if version != LLCK_VERSION:
        raise FormatError(f"LLCK: unsupported version {version}")
    spec = NetSpec(cin, depth, base, r)
    params = build(spec, seed=0)
    shapes = [p.shape for p in params.parameters()]
    pos = _HEAD.size

    def take(shape):
        nonlocal pos
        n = math.prod(shape)
        if pos + 8 * n > len(buf):
            raise FormatError("LLCK: truncated payload")
        a = np.frombuffer(buf, "<f8", n, pos).reshape(shape).astype(np.float64)
        pos += 8 * n
        return a

    m = v = None
    if has_m:
        m = [take(s) for s in shapes]
        v = [take(s) for s in shapes]
    for p in params.parameters():
        p.data = take(p.shape)
    if pos != len(buf):
        raise FormatError(f"LLCK: {len(buf) - pos} trailing bytes")
    params.seed = None
    return Checkpoint(params, epoch, step, m, v)


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
