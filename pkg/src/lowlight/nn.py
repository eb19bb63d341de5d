"""Differentiable layer primitives on NCHW tensors.

All spatial ops use cross-correlation (no kernel flip). Gradients are
computed with the same im2col layout as the forward pass so each op costs a
handful of BLAS calls.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, InvalidShapeError
from .tensor import Tensor, make_result, needs_grad

LEAKY_SLOPE = 0.2


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise InvalidShapeError(f"{op}: expected a 4-D NCHW tensor, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(B, Cin, H, W)``.
    weight : Tensor
        Kernel of shape ``(Cout, Cin, kh, kw)``.
    bias : Tensor, optional
        Per-output-channel offset of shape ``(Cout,)``.
    stride, padding : int
        Output extent is ``(H + 2*padding - kh) // stride + 1``.
    """
    _require_4d(x, "conv2d")
    if weight.ndim != 4:
        raise InvalidShapeError(f"conv2d: kernel must be 4-D, got {weight.shape}")
    if stride <= 0:
        raise InvalidArgumentError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise InvalidArgumentError(f"conv2d: padding must be non-negative, got {padding}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise InvalidShapeError(f"conv2d: input has {C} channels but kernel expects {Ci}")
    if bias is not None and bias.shape != (O,):
        raise InvalidShapeError(f"conv2d: bias shape {bias.shape} != ({O},)")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise InvalidShapeError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1

    need_x, need_w = needs_grad(x), needs_grad(weight)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # columns are (C*kh*kw, B*Ho*Wo): each row copies a contiguous image plane
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(C * kh * kw, B * Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = _from_channel_major(out, B, O, Ho, Wo)
    if not need_w:
        cols = None

    def backward(g):
        gm = _to_channel_major(g)
        gw = (gm @ cols.T).reshape(weight.shape) if need_w else None
        gx = None
        if need_x:
            gcols = (wmat.T @ gm).reshape(C, kh, kw, B, Ho, Wo)
            gxp = np.zeros((C, B) + xp.shape[2:])
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u : u + stride * (Ho - 1) + 1 : stride, v : v + stride * (Wo - 1) + 1 : stride] += gcols[:, u, v]
            gx = gxp[:, :, padding : padding + H, padding : padding + W].transpose(1, 0, 2, 3)
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, backward)


def _to_channel_major(a: np.ndarray) -> np.ndarray:
    B, C, H, W = a.shape
    if B == 1:
        return a.reshape(C, H * W)
    return a.transpose(1, 0, 2, 3).reshape(C, B * H * W)


def _from_channel_major(m: np.ndarray, B: int, C: int, H: int, W: int) -> np.ndarray:
    if B == 1:
        return m.reshape(1, C, H, W)
    return np.ascontiguousarray(m.reshape(C, B, H, W).transpose(1, 0, 2, 3))


def transpose_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution (adjoint of a strided ``conv2d``), no padding.

    ``weight`` has shape ``(Cin, Cout, kh, kw)``; the output extent is
    ``(H - 1) * stride + kh``, i.e. exactly ``2H`` for the 2x2/stride-2 case.
    """
    _require_4d(x, "transpose_conv2d")
    if weight.ndim != 4:
        raise InvalidShapeError(f"transpose_conv2d: kernel must be 4-D, got {weight.shape}")
    if stride <= 0:
        raise InvalidArgumentError(f"transpose_conv2d: stride must be positive, got {stride}")
    B, C, H, W = x.shape
    Ci, O, kh, kw = weight.shape
    if Ci != C:
        raise InvalidShapeError(f"transpose_conv2d: input has {C} channels but kernel expects {Ci}")
    if bias is not None and bias.shape != (O,):
        raise InvalidShapeError(f"transpose_conv2d: bias shape {bias.shape} != ({O},)")
    Ho, Wo = (H - 1) * stride + kh, (W - 1) * stride + kw
    hs, ws = stride * (H - 1) + 1, stride * (W - 1) + 1

    need_x, need_w = needs_grad(x), needs_grad(weight)
    xm = _to_channel_major(x.data)
    wm = weight.data.reshape(C, O * kh * kw)
    cols = (wm.T @ xm).reshape(O, kh, kw, B, H, W)
    outc = np.zeros((O, B, Ho, Wo))
    for u in range(kh):
        for v in range(kw):
            outc[:, :, u : u + hs : stride, v : v + ws : stride] += cols[:, u, v]
    if bias is not None:
        outc += bias.data[:, None, None, None]
    out = np.ascontiguousarray(outc.transpose(1, 0, 2, 3))

    def backward(g):
        gc = g.transpose(1, 0, 2, 3)
        gcols = np.empty((O, kh, kw, B, H, W))
        for u in range(kh):
            for v in range(kw):
                gcols[:, u, v] = gc[:, :, u : u + hs : stride, v : v + ws : stride]
        gcm = gcols.reshape(O * kh * kw, -1)
        gw = (xm @ gcm.T).reshape(weight.shape) if need_w else None
        gx = _from_channel_major(wm @ gcm, B, C, H, W) if need_x else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, backward)


def _windows2(x: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    return x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)


def _unwindows2(w: np.ndarray) -> np.ndarray:
    B, C, h, ww, _ = w.shape
    return w.reshape(B, C, h, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h, 2 * ww)


def _check_even(x: Tensor, op: str) -> None:
    _require_4d(x, op)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise InvalidShapeError(f"{op}: spatial extents must be even, got {x.shape[2]}x{x.shape[3]}")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties send the gradient to the first
    element of the window in row-major order."""
    _check_even(x, "maxpool2")
    win = _windows2(x.data)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (_unwindows2(gw),)

    return make_result(out, (x,), backward)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 mean pooling, stride 2."""
    _check_even(x, "avgpool2")
    out = _windows2(x.data).mean(axis=-1)

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_result(out, (x,), backward)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    # x == 0 takes the identity branch, so its subgradient is 1.
    pos = x.data >= 0
    out = np.where(pos, x.data, slope * x.data)
    return make_result(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``a`` then ``b`` along the channel axis."""
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise InvalidShapeError(f"concat_channels: {a.shape} and {b.shape} differ outside the channel axis")
    c1 = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_result(out, (a, b), lambda g: (g[:, :c1], g[:, c1:]))


def _shuffle(x: np.ndarray, r: int) -> np.ndarray:
    B, Cr, H, W = x.shape
    C = Cr // (r * r)
    return x.reshape(B, C, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * r, W * r)


def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    B, C, Hr, Wr = x.shape
    H, W = Hr // r, Wr // r
    return x.reshape(B, C, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, H, W)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Sub-pixel rearrangement ``(B, C*r*r, H, W) -> (B, C, r*H, r*W)``.

    Channel ``c*r*r + dy*r + dx`` lands at spatial offset ``(dy, dx)`` of
    each ``r x r`` output block.
    """
    _require_4d(x, "pixel_shuffle")
    if r < 1:
        raise InvalidArgumentError(f"pixel_shuffle: factor must be >= 1, got {r}")
    if x.shape[1] % (r * r):
        raise InvalidShapeError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2 = {r * r}")
    return make_result(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    _require_4d(x, "pixel_unshuffle")
    if r < 1:
        raise InvalidArgumentError(f"pixel_unshuffle: factor must be >= 1, got {r}")
    if x.shape[2] % r or x.shape[3] % r:
        raise InvalidShapeError(f"pixel_unshuffle: extents {x.shape[2]}x{x.shape[3]} not divisible by {r}")
    return make_result(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


def filter2d(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Apply one fixed 2-D kernel to every channel, 'valid' extent.

    The kernel is a constant (no gradient); gradients flow to ``x``.
    """
    _require_4d(x, "filter2d")
    k = np.asarray(kernel, dtype=np.float64)
    kh, kw = k.shape
    H, W = x.shape[2:]
    if H < kh or W < kw:
        raise InvalidShapeError(f"filter2d: image {H}x{W} smaller than window {kh}x{kw}")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out = np.tensordot(win, k, axes=([4, 5], [0, 1]))

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
        return (np.tensordot(gwin, k[::-1, ::-1], axes=([4, 5], [0, 1])),)

    return make_result(out, (x,), backward)


def crop(x: Tensor, height: int, width: int, top: int = 0, left: int = 0) -> Tensor:
    """Spatial slice ``x[..., top:top+height, left:left+width]``."""
    _require_4d(x, "crop")
    H, W = x.shape[2:]
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise InvalidShapeError(f"crop: window {height}x{width}@({top},{left}) exceeds {H}x{W}")
    out = x.data[:, :, top : top + height, left : left + width].copy()

    def backward(g):
        gx = np.zeros(x.shape)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return make_result(out, (x,), backward)


def separable_filter2d(x: Tensor, k_rows: np.ndarray, k_cols: np.ndarray) -> Tensor:
    """Same as ``filter2d(x, np.outer(k_rows, k_cols))`` computed as two 1-D passes."""
    _require_4d(x, "separable_filter2d")
    kv = np.asarray(k_rows, dtype=np.float64)
    kh = np.asarray(k_cols, dtype=np.float64)
    H, W = x.shape[2:]
    if H < kv.size or W < kh.size:
        raise InvalidShapeError(f"separable_filter2d: image {H}x{W} smaller than window {kv.size}x{kh.size}")
    Ho, Wo = H - kv.size + 1, W - kh.size + 1
    tmp = np.zeros(x.shape[:2] + (Ho, W))
    for u, c in enumerate(kv):
        tmp += c * x.data[:, :, u : u + Ho, :]
    out = np.zeros(x.shape[:2] + (Ho, Wo))
    for v, c in enumerate(kh):
        out += c * tmp[:, :, :, v : v + Wo]

    def backward(g):
        gtmp = np.zeros(tmp.shape)
        for v, c in enumerate(kh):
            gtmp[:, :, :, v : v + Wo] += c * g
        gx = np.zeros(x.shape)
        for u, c in enumerate(kv):
            gx[:, :, u : u + Ho, :] += c * gtmp
        return (gx,)

    return make_result(out, (x,), backward)
