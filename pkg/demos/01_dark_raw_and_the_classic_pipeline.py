"""
Why a dark RAW frame is hard for a hand-built pipeline
=======================================================

We synthesize a 1/100 exposure of a smooth scene, then run the classic
chain (black level, gray-world white balance, bilinear demosaic, gamma)
with and without brightening. Noise that was invisible in the long
exposure dominates once the signal is scaled back up.

Run:  python3 demos/01_dark_raw_and_the_classic_pipeline.py
"""

from pathlib import Path

import numpy as np

from lowlight.images import mean_lightness, write_image
from lowlight.losses import psnr
from lowlight.raw import CFA, NoiseParams, pack, reference_pipeline, synthesize_pair
from lowlight.synth import smooth_scene

out = Path("demo_output")
out.mkdir(exist_ok=True)

clean = smooth_scene(128, 128, seed=4)
write_image(clean, out / "01_ground_truth.png")

# %% a short exposure through a noisy sensor
raw, _ = synthesize_pair(clean, CFA.bayer(), exposure_ratio=100.0, noise=NoiseParams(), seed=0)
s = raw.samples
print(f"raw frame {s.shape}, exposure {raw.exposure_s:.2f}s")
print(f"ADU range {s.min()}..{s.max()} of white level {raw.white_level} (black level {raw.black_level})")

# Most of the 14-bit range goes unused: the signal sits just above black.
used = (s.max() - raw.black_level) / (raw.white_level - raw.black_level)
print(f"fraction of the dynamic range used: {used:.3%}")

# %% packing: the 2x2 Bayer lattice becomes 4 half-resolution channels
packed = pack(raw, amplification=100.0)
print("packed tensor", packed.tensor.shape)

# %% the classic chain, straight and brightened by the exposure ratio
for amp in (1.0, 100.0):
    img = reference_pipeline(raw, amplification=amp)
    score = psnr(img.data, clean.data)
    print(f"amplification {amp:5.0f}: mean lightness {mean_lightness(img):.3f}, PSNR vs truth {score:.2f} dB")
    write_image(img, out / f"01_classic_x{int(amp)}.png")

# %% same scene without sensor noise: what is left is demosaicking error
quiet, _ = synthesize_pair(clean, CFA.bayer(), 100.0, NoiseParams.disabled(), seed=0)
img = reference_pipeline(quiet, amplification=100.0)
print(f"noise-free classic chain: PSNR {psnr(img.data, clean.data):.2f} dB")
print(f"images written to {out.resolve()}")
