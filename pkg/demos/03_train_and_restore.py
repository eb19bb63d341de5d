"""
Training the restoration network at desk scale
==============================================

A depth-3, width-8 U-Net learns to map packed, amplified RAW data straight
to sRGB. We train it for a few minutes on eight synthetic pairs and compare
its output with the classic pipeline on a held-out frame.

Run:  python3 demos/03_train_and_restore.py        (about a minute)
"""

import time
from pathlib import Path

import numpy as np

from lowlight.images import RgbImage, write_image
from lowlight.losses import LossConfig, psnr
from lowlight.net import NetSpec, forward, save_checkpoint
from lowlight.raw import reference_pipeline
from lowlight.synth import make_pairs
from lowlight.tensor import Tensor, no_grad
from lowlight.train import TrainConfig, train

out = Path("demo_output")
out.mkdir(exist_ok=True)

pairs = make_pairs(9, 64, seed=1)
train_set, held_out = pairs[:8], pairs[8]
spec = NetSpec.desk()
print(f"network: {spec.parameter_count()} parameters, {len(spec.layer_shapes())} conv layers")

# A faster schedule than the default, same shape: constant, then 10x lower.
cfg = TrainConfig(epochs=120, crop_size=32, lr_initial=1e-3, lr_after=1e-4, seed=0,
                  loss=LossConfig(msssim_scales=2))
t0 = time.time()
res = train(train_set, cfg, spec)
print(f"trained {len(res.history)} iterations in {time.time() - t0:.0f}s")

# %% loss curve, averaged per 10 epochs
totals = np.array([r.total for r in res.history]).reshape(-1, 10 * len(train_set)).mean(axis=1)
for i, v in enumerate(totals):
    print(f"epochs {10 * i:3d}-{10 * i + 9:3d}: total loss {v:.4f} " + "#" * int(v * 400))

save_checkpoint(res.checkpoint(), out / "03_desk.llck")

# %% restore the held-out frame
with no_grad():
    pred = forward(res.params, Tensor(held_out.packed()))
learned = RgbImage(Tensor(np.clip(pred.data, 0, 1)))
classic = reference_pipeline(held_out.raw, amplification=held_out.amplification)
truth = held_out.target
print(f"held-out PSNR: learned {psnr(learned.data, truth.data):.2f} dB, "
      f"classic {psnr(classic.data, truth.data):.2f} dB")
for name, img in (("learned", learned), ("classic", classic), ("truth", truth)):
    write_image(img, out / f"03_{name}.png")
