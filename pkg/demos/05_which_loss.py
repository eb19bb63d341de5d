"""
Comparing loss mixes
====================

The training objective blends an L1 / MS-SSIM pixel term with a feature
term computed by a frozen convolutional extractor. Training the same
network from the same seed under each mix shows what each part buys.

Run:  python3 demos/05_which_loss.py        (about a minute and a half)
"""

import time

from lowlight.ablation import run_ablation
from lowlight.losses import LossConfig
from lowlight.net import NetSpec
from lowlight.synth import make_pairs
from lowlight.train import TrainConfig

pairs = make_pairs(10, 64, seed=0)
cfg = TrainConfig(epochs=30, crop_size=32, seed=0, lr_initial=1e-3, lr_after=1e-4,
                  loss=LossConfig(msssim_scales=2))

t0 = time.time()
rows = run_ablation(pairs, cfg, NetSpec.desk())
print(f"{len(rows)} trainings in {time.time() - t0:.0f}s\n")
print(f"{'mix':16s} {'alpha':>5s} {'beta':>5s} {'PSNR':>7s}")
for r in sorted(rows, key=lambda r: r.psnr):
    print(f"{r.name:16s} {r.alpha:5.2f} {r.beta:5.2f} {r.psnr:7.2f}")
# Without any pixel term the network gets no direct signal about absolute
# brightness and color, which is why the feature-only mix lags.
