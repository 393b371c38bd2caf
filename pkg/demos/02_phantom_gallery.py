#!/usr/bin/env python3
"""Generate phantom B-scans for each built-in device profile.

Writes the images, their label maps, and truth-curve overlays into
demos/output/phantoms/ so the speckle, saturation stripe, and glare band
can be eyeballed.
"""

import os

import numpy as np
from PIL import Image

from cornet import data, phantom

OUT = os.path.join(os.path.dirname(__file__), "output", "phantoms")
os.makedirs(OUT, exist_ok=True)

COLORS = {"EP": (255, 0, 0), "BL": (0, 255, 0), "EN": (255, 165, 0)}

for key in sorted(data.BUILTIN_PROFILES):
    profile = data.get_profile(key)
    scan, labels, curves = phantom.synth_phantom(7, profile)
    img = scan.intensities
    data.write_pgm(os.path.join(OUT, f"{key}.pgm"), img)
    data.write_pgm(os.path.join(OUT, f"{key}_labels.pgm"), labels * 80)

    rgb = np.repeat(img[:, :, None], 3, axis=2)
    for name, color in COLORS.items():
        ys = np.clip(np.rint(curves[name]), 0, img.shape[0] - 1).astype(int)
        rgb[ys, np.arange(img.shape[1])] = color
    Image.fromarray(rgb, "RGB").save(os.path.join(OUT, f"{key}_truth.png"))

    gaps_px = np.diff([curves[n].mean() for n in ("EP", "BL", "EN")])
    print(f"{profile.name}: {img.shape[1]}x{img.shape[0]} px, "
          f"EP->BL {gaps_px[0] * profile.axial_um_per_px:.0f} um, "
          f"EP->EN {(gaps_px[0] + gaps_px[1]) * profile.axial_um_per_px:.0f} um")

print(f"\nwrote gallery to {OUT}")
