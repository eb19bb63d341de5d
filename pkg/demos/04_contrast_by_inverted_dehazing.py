"""
Brightening a dark image by dehazing its negative
=================================================

The negative of a dark image looks like a hazy one, so a dark-channel
dehazer applied to ``1 - I`` and inverted back lifts the shadows while
leaving already-bright regions alone.

Run:  python3 demos/04_contrast_by_inverted_dehazing.py
"""

from pathlib import Path

import numpy as np

from lowlight.contrast import DehazeParams, dehaze_details, enhance_contrast, invert
from lowlight.images import lightness, lightness_histogram, mean_lightness, write_image
from lowlight.synth import dark_scene

out = Path("demo_output")
out.mkdir(exist_ok=True)

img = dark_scene(96, 96, seed=2)
print(f"dark image: mean lightness {mean_lightness(img):.3f}, "
      f"{np.mean(lightness(img) < 0.5):.0%} of pixels below 0.5")

# %% look inside: transmission and airlight estimated on the negative
details = dehaze_details(invert(img), DehazeParams())
t = details.transmission
print(f"airlight of the negative: {np.round(details.airlight, 3)}")
print(f"transmission: min {t.min():.3f}, median {np.median(t):.3f}, max {t.max():.3f}")

# %% the whole procedure
bright = enhance_contrast(img)
print(f"enhanced: mean lightness {mean_lightness(bright):.3f}")

before, edges = lightness_histogram(img, 16)
after, _ = lightness_histogram(bright, 16)
print("lightness   before  after")
for lo, b, a in zip(edges[:-1], before, after):
    print(f"  {lo:4.2f}    {b:6d} {a:6d}")

# %% omega controls how much haze (here: darkness) is removed
for omega in (0.0, 0.5, 0.95):
    print(f"omega {omega:4.2f}: mean lightness {mean_lightness(enhance_contrast(img, DehazeParams(omega=omega))):.3f}")

write_image(img, out / "04_dark.png")
write_image(bright, out / "04_enhanced.png")
