"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradientTape, Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``t.data``.

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the returned array are NaN.
    """
    flat = t.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    probe = range(flat.size) if indices is None else indices
    with no_grad():
        for i in probe:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().item()
            flat[i] = orig - eps
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(t.shape)


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with GradientTape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``||a - n|| / max(||a||, ||n||)`` over probed entries.

    Entry-wise ratios are dominated by round-off wherever the true gradient
    is near zero, so the comparison is made on the whole vector.
    """
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5, indices=None) -> float:
    """Return the worst relative error between tape and finite-difference gradients.

    ``indices`` may be a list (one entry per param) of flat index subsets.
    """
    grads = analytic_grads(fn, params)
    worst = 0.0
    for k, (p, g) in enumerate(zip(params, grads)):
        idx = None if indices is None else indices[k]
        worst = max(worst, max_relative_error(g, numerical_grad(fn, p, eps, idx)))
    return worst
