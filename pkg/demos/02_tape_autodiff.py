"""
Reverse-mode gradients on a tape
================================

Operations executed inside a ``GradientTape`` are recorded; ``backward``
walks them in reverse. The same machinery trains the restoration network,
so here we check it against finite differences on a small convolution.

Run:  python3 demos/02_tape_autodiff.py
"""

import numpy as np

from lowlight import nn
from lowlight.gradcheck import check_gradients
from lowlight.tensor import GradientTape, Tensor, no_grad

rng = np.random.default_rng(0)

# %% a scalar function of two tensors
a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
b = Tensor(np.array([0.5, -1.0, 4.0]), requires_grad=True)
with GradientTape() as tape:
    y = (a * b + a**2.0).sum()
tape.backward(y)
print("y =", y.item())
print("dy/da =", a.grad, " (expected b + 2a =", b.data + 2 * a.data, ")")
print("dy/db =", b.grad, " (expected a =", a.data, ")")

# A tape is single use; a second backward raises.
try:
    tape.backward(y)
except Exception as exc:
    print("second backward:", type(exc).__name__)

# %% nothing is recorded under no_grad
with GradientTape() as tape, no_grad():
    z = (a * 3.0).sum()
print("recorded under no_grad:", z.tape_id is not None)

# %% convolution + leaky ReLU + pixel shuffle, checked numerically
x = Tensor(rng.normal(size=(1, 3, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(12, 3, 3, 3)) * 0.3, requires_grad=True)
bias = Tensor(rng.normal(size=12), requires_grad=True)
readout = Tensor(rng.normal(size=(1, 3, 12, 12)))


def f():
    h = nn.leaky_relu(nn.conv2d(x, w, bias, padding=1))
    return (nn.pixel_shuffle(h, 2) * readout).sum()


err = check_gradients(f, [x, w, bias])
print(f"conv -> leaky_relu -> pixel_shuffle: relative error vs finite differences {err:.2e}")
