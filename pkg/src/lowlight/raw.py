"""RAW sensor frames: normalization, CFA packing, a classic reference
pipeline, synthetic low-light pair generation and the LLRW container."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from .errors import FormatError, InvalidArgumentError, InvalidShapeError, UnsupportedCFAError
from .images import RgbImage
from .nn import _shuffle, _unshuffle
from .tensor import Tensor

RED, GREEN, BLUE = 0, 1, 2
DEFAULT_BLACK_LEVEL = 512
DEFAULT_WHITE_LEVEL = 16383
GAMMA = 2.2

# Fujifilm-style 6x6 layout: 20 G, 8 R, 8 B per tile.
XTRANS_PATTERN = (
    (1, 1, 0, 1, 1, 2),
    (1, 1, 2, 1, 1, 0),
    (2, 0, 1, 0, 2, 1),
    (1, 1, 2, 1, 1, 0),
    (1, 1, 0, 1, 1, 2),
    (0, 2, 1, 2, 0, 1),
)


@dataclass(frozen=True)
class CFA:
    """Color filter array layout. ``pattern`` holds color indices (0=R, 1=G, 2=B)."""

    kind: str
    pattern: tuple

    def __post_init__(self):
        size = {"bayer": 2, "xtrans": 6}.get(self.kind)
        if size is None:
            raise InvalidArgumentError(f"unknown CFA kind {self.kind!r}")
        p = np.asarray(self.pattern)
        if p.shape != (size, size) or not np.isin(p, (RED, GREEN, BLUE)).all():
            raise InvalidArgumentError(f"{self.kind} pattern must be {size}x{size} color indices")
        object.__setattr__(self, "pattern", tuple(tuple(int(v) for v in row) for row in p))

    @classmethod
    def bayer(cls, layout: str = "RGGB") -> "CFA":
        lut = {"R": RED, "G": GREEN, "B": BLUE}
        codes = [lut[ch] for ch in layout.upper()]
        return cls("bayer", ((codes[0], codes[1]), (codes[2], codes[3])))

    @classmethod
    def xtrans(cls) -> "CFA":
        return cls("xtrans", XTRANS_PATTERN)

    @property
    def period(self) -> int:
        return len(self.pattern)

    @property
    def pack_factor(self) -> int:
        """Spatial reduction of the packed tensor (2 for Bayer, 3 for X-Trans)."""
        return 2 if self.kind == "bayer" else 3

    @property
    def packed_channels(self) -> int:
        return self.pack_factor**2

    def color_map(self, height: int, width: int) -> np.ndarray:
        p = np.asarray(self.pattern)
        reps = (-(-height // self.period), -(-width // self.period))
        return np.tile(p, reps)[:height, :width]


@dataclass
class RawFrame:
    """Single-channel sensor readout with its acquisition metadata."""

    samples: np.ndarray
    cfa: CFA = field(default_factory=CFA.bayer)
    black_level: int = DEFAULT_BLACK_LEVEL
    white_level: int = DEFAULT_WHITE_LEVEL
    exposure_s: float = 0.1

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise InvalidShapeError(f"RawFrame samples must be 2-D, got shape {s.shape}")
        if s.dtype != np.uint16:
            if s.size and (s.min() < 0 or s.max() > 65535):
                raise InvalidArgumentError("RawFrame samples must fit in uint16")
            s = s.astype(np.uint16)
        self.samples = s
        if not 0 <= self.black_level < self.white_level <= 65535:
            raise InvalidArgumentError(
                f"need 0 <= black_level < white_level <= 65535, got {self.black_level}, {self.white_level}"
            )
        p = self.cfa.period
        if self.height % p or self.width % p:
            raise InvalidShapeError(f"{self.cfa.kind} frame extents must be multiples of {p}, got {self.height}x{self.width}")
        if s.size and int(s.max()) > self.white_level:
            raise InvalidArgumentError(f"sample {int(s.max())} exceeds white level {self.white_level}")
        if self.exposure_s <= 0:
            raise InvalidArgumentError(f"exposure must be positive, got {self.exposure_s}")

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass
class PackedRaw:
    tensor: Tensor
    amplification: float = 1.0


@dataclass(frozen=True)
class NoiseParams:
    """Poisson-Gaussian sensor noise in normalized units.

    ``photon_scale`` is the photon count of a full-scale (1.0) signal; None
    disables shot noise. ``read_sigma`` is the read-noise standard deviation.
    """

    photon_scale: float | None = 2000.0
    read_sigma: float = 0.0005

    @classmethod
    def disabled(cls) -> "NoiseParams":
        return cls(photon_scale=None, read_sigma=0.0)


def subtract_black_level(raw: RawFrame) -> Tensor:
    """Normalize to ``[0, 1]``: ``max(s - black, 0) / (white - black)``; shape ``(1, 1, H, W)``."""
    s = raw.samples.astype(np.float64)
    out = np.maximum(s - raw.black_level, 0.0) / (raw.white_level - raw.black_level)
    return Tensor(out[None, None])


def _check_mosaic(t: Tensor, multiple: int, op: str) -> None:
    if t.ndim != 4 or t.shape[:2] != (1, 1):
        raise InvalidShapeError(f"{op}: expected a (1, 1, H, W) mosaic, got {t.shape}")
    if t.shape[2] % multiple or t.shape[3] % multiple:
        raise InvalidShapeError(f"{op}: extents {t.shape[2]}x{t.shape[3]} must be multiples of {multiple}")


def pack_bayer(normalized: Tensor, pattern: CFA | None = None) -> Tensor:
    """Split the 2x2 lattice into 4 channels ordered (0,0), (0,1), (1,0), (1,1).

    Channel order is positional, so ``pattern`` only documents which color
    each channel carries.
    """
    if pattern is not None and pattern.kind != "bayer":
        raise UnsupportedCFAError(f"pack_bayer got a {pattern.kind} pattern")
    _check_mosaic(normalized, 2, "pack_bayer")
    return Tensor(_unshuffle(normalized.data, 2))


def unpack_bayer(packed: Tensor) -> Tensor:
    if packed.ndim != 4 or packed.shape[:2] != (1, 4):
        raise InvalidShapeError(f"unpack_bayer: expected (1, 4, h, w), got {packed.shape}")
    return Tensor(_shuffle(packed.data, 2))


def pack_xtrans(normalized: Tensor, pattern: CFA | None = None) -> Tensor:
    """Cut each 6x6 tile into four 3x3 cells; the 9 intra-cell positions
    (row-major) become channels at one third of the resolution."""
    if pattern is not None and pattern.kind != "xtrans":
        raise UnsupportedCFAError(f"pack_xtrans got a {pattern.kind} pattern")
    _check_mosaic(normalized, 6, "pack_xtrans")
    return Tensor(_unshuffle(normalized.data, 3))


def unpack_xtrans(packed: Tensor) -> Tensor:
    if packed.ndim != 4 or packed.shape[:2] != (1, 9):
        raise InvalidShapeError(f"unpack_xtrans: expected (1, 9, h, w), got {packed.shape}")
    if packed.shape[2] % 2 or packed.shape[3] % 2:
        raise InvalidShapeError("unpack_xtrans: packed extents must be even (whole 6x6 tiles)")
    return Tensor(_shuffle(packed.data, 3))


def pack(raw: RawFrame, amplification: float = 1.0) -> PackedRaw:
    norm = subtract_black_level(raw)
    t = pack_bayer(norm, raw.cfa) if raw.cfa.kind == "bayer" else pack_xtrans(norm, raw.cfa)
    return PackedRaw(t, amplification)


def amplify(packed: PackedRaw, factor: float | None = None) -> Tensor:
    """Multiply by the exposure ratio (no clamping). Defaults to ``packed.amplification``."""
    factor = packed.amplification if factor is None else float(factor)
    if not factor > 0:
        raise InvalidArgumentError(f"amplification factor must be positive, got {factor}")
    return Tensor(packed.tensor.data * factor)


def exposure_ratio(reference_exposure_s: float, input_exposure_s: float) -> float:
    """Amplification implied by exposure metadata: reference over input."""
    if reference_exposure_s <= 0 or input_exposure_s <= 0:
        raise InvalidArgumentError("exposure times must be positive")
    return reference_exposure_s / input_exposure_s


def preprocess(raw: RawFrame, amplification: float) -> Tensor:
    """Network input: black level, pack, amplify."""
    return amplify(pack(raw, amplification))


# reference pipeline ---------------------------------------------------

_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])
_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])


def gray_world_gains(mosaic: np.ndarray, cfa: CFA) -> np.ndarray:
    """Per-color gains equalizing the channel means to the green mean."""
    colors = cfa.color_map(*mosaic.shape)
    means = np.array([mosaic[colors == c].mean() for c in (RED, GREEN, BLUE)])
    safe = np.where(means > 0, means, 1.0)
    return np.where(means > 0, means[GREEN] / safe, 1.0)


def demosaic_bilinear(mosaic: np.ndarray, cfa: CFA) -> np.ndarray:
    """Bilinear interpolation by normalized convolution; returns ``(3, H, W)``."""
    colors = cfa.color_map(*mosaic.shape)
    out = np.empty((3,) + mosaic.shape)
    for c, k in ((RED, _K_RB), (GREEN, _K_G), (BLUE, _K_RB)):
        mask = (colors == c).astype(np.float64)
        num = correlate(mosaic * mask, k, mode="constant")
        den = correlate(mask, k, mode="constant")
        if not den.all():
            # X-Trans corners can lack a color within 3x3; widen to 5x5 there
            wide = np.ones((5, 5))
            hole = den == 0
            num[hole] = correlate(mosaic * mask, wide, mode="constant")[hole]
            den[hole] = correlate(mask, wide, mode="constant")[hole]
        out[c] = num / den
    return out


def gamma_encode(linear: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    return np.clip(linear, 0.0, 1.0) ** (1.0 / gamma)


def gamma_decode(encoded: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    return np.clip(encoded, 0.0, 1.0) ** gamma


def reference_pipeline(
    raw: RawFrame,
    white_balance="gray_world",
    ccm: np.ndarray | None = None,
    amplification: float = 1.0,
    gamma: float = GAMMA,
) -> RgbImage:
    """Hand-crafted baseline: black level, white balance, bilinear demosaic,
    color correction, gamma.

    ``white_balance`` is ``"gray_world"`` or explicit (R, G, B) gains.
    ``amplification`` brightens the linear signal before clipping, for
    viewing dark captures.
    """
    if raw.cfa.kind != "bayer":
        raise UnsupportedCFAError("reference_pipeline supports Bayer frames only")
    mosaic = subtract_black_level(raw).data[0, 0]
    if isinstance(white_balance, str):
        if white_balance != "gray_world":
            raise InvalidArgumentError(f"unknown white balance mode {white_balance!r}")
        gains = gray_world_gains(mosaic, raw.cfa)
    else:
        gains = np.asarray(white_balance, dtype=np.float64)
    mosaic = mosaic * gains[raw.cfa.color_map(*mosaic.shape)]
    rgb = demosaic_bilinear(mosaic, raw.cfa)
    m = np.eye(3) if ccm is None else np.asarray(ccm, dtype=np.float64)
    rgb = np.tensordot(m, rgb, axes=(1, 0)) * amplification
    return RgbImage(Tensor(gamma_encode(rgb, gamma)[None]))


# synthesis ------------------------------------------------------------


def mosaic_linear(linear: np.ndarray, cfa: CFA) -> np.ndarray:
    """Sample a ``(3, H, W)`` linear image through the CFA."""
    _, h, w = linear.shape
    colors = cfa.color_map(h, w)
    return np.take_along_axis(linear, colors[None], axis=0)[0]


def synthesize_pair(
    clean: RgbImage,
    cfa: CFA,
    exposure_ratio: float,
    noise: NoiseParams = NoiseParams(),
    seed: int = 0,
    black_level: int = DEFAULT_BLACK_LEVEL,
    white_level: int = DEFAULT_WHITE_LEVEL,
    reference_exposure_s: float = 10.0,
) -> tuple[RawFrame, RgbImage]:
    """Simulate a short exposure of ``clean`` through a noisy sensor.

    Returns the synthetic frame (exposure ``reference_exposure_s / ratio``)
    and ``clean`` itself as ground truth. Deterministic for a given seed.
    """
    if not exposure_ratio >= 1:
        raise InvalidArgumentError(f"exposure ratio must be >= 1, got {exposure_ratio}")
    data = clean.data[0]
    if data.shape[1] % cfa.period or data.shape[2] % cfa.period:
        raise InvalidShapeError(f"image extents must be multiples of {cfa.period} for {cfa.kind}")
    rng = np.random.default_rng(seed)
    signal = mosaic_linear(gamma_decode(data), cfa) / exposure_ratio
    if noise.photon_scale is not None:
        signal = rng.poisson(signal * noise.photon_scale) / noise.photon_scale
    if noise.read_sigma > 0:
        signal = signal + rng.normal(0.0, noise.read_sigma, size=signal.shape)
    adu = np.round(black_level + signal * (white_level - black_level))
    samples = np.clip(adu, 0, white_level).astype(np.uint16)
    frame = RawFrame(samples, cfa, black_level, white_level, reference_exposure_s / exposure_ratio)
    return frame, clean


# LLRW container -------------------------------------------------------

LLRW_MAGIC = b"LLRW"
LLRW_VERSION = 1
_LLRW_HEADER = struct.Struct("<4sHIIB36sHHI")


def encode_llrw(raw: RawFrame) -> bytes:
    pattern = np.zeros(36, dtype=np.uint8)
    flat = np.asarray(raw.cfa.pattern, dtype=np.uint8).reshape(-1)
    pattern[: flat.size] = flat
    header = _LLRW_HEADER.pack(
        LLRW_MAGIC,
        LLRW_VERSION,
        raw.width,
        raw.height,
        0 if raw.cfa.kind == "bayer" else 1,
        pattern.tobytes(),
        raw.black_level,
        raw.white_level,
        int(round(raw.exposure_s * 1e6)),
    )
    return header + raw.samples.astype("<u2").tobytes()


def decode_llrw(buf: bytes) -> RawFrame:
    if len(buf) < _LLRW_HEADER.size:
        raise FormatError("LLRW: truncated header")
    magic, version, width, height, cfa_type, pattern, black, white, micros = _LLRW_HEADER.unpack_from(buf)
    if magic != LLRW_MAGIC:
        raise FormatError(f"LLRW: bad magic {magic!r}")
    if version != LLRW_VERSION:
        raise FormatError(f"LLRW: unsupported version {version}")
    if cfa_type not in (0, 1):
        raise FormatError(f"LLRW: unknown cfa type {cfa_type}")
    n = width * height
    body = buf[_LLRW_HEADER.size :]
    if len(body) != 2 * n:
        raise FormatError(f"LLRW: expected {2 * n} sample bytes, found {len(body)}")
    size = 2 if cfa_type == 0 else 6
    codes = np.frombuffer(pattern, dtype=np.uint8)[: size * size].reshape(size, size)
    cfa = CFA("bayer" if cfa_type == 0 else "xtrans", tuple(map(tuple, codes)))
    samples = np.frombuffer(body, dtype="<u2").reshape(height, width).astype(np.uint16)
    return RawFrame(samples, cfa, black, white, micros / 1e6)


def write_llrw(raw: RawFrame, path) -> None:
    Path(path).write_bytes(encode_llrw(raw))


def read_llrw(path) -> RawFrame:
    return decode_llrw(Path(path).read_bytes())
