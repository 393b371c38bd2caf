"""Synthetic corneal phantom generator.

Each B-scan carries three smooth convex arcs (EP on top, BL 40-80 um below,
EN 400-600 um below the EP, converted to pixels through the device profile),
rendered as bright bands over a dimmer stroma with multiplicative speckle,
plus one vertical saturation stripe and one horizontal glare band at random
positions. The pixel-exact truth curves are returned alongside the image.
"""

import numpy as np

from .data import BScan, DeviceProfile, Volume, encode_labels

BAND_PX = 3


def _curves(rng, profile: DeviceProfile):
    w, h = profile.width_px, profile.height_px
    axial = profile.axial_um_per_px
    x = np.arange(w, dtype=np.float64)
    cx = w * rng.uniform(0.35, 0.65)
    halfw = w * rng.uniform(0.55, 0.75)
    apex = h * rng.uniform(0.18, 0.32)
    sag = h * rng.uniform(0.04, 0.10)
    shape = ((x - cx) / halfw) ** 2
    ep = apex + sag * shape
    bl = ep + rng.uniform(40.0, 80.0) / axial
    en = apex + rng.uniform(400.0, 600.0) / axial + sag * rng.uniform(0.85, 1.15) * shape
    return {"EP": ep, "BL": bl, "EN": en}


def synth_phantom(seed, profile: DeviceProfile, band_px=BAND_PX):
    """One deterministic phantom B-scan: (BScan, label map, truth curves)."""
    rng = np.random.default_rng(seed)
    w, h = profile.width_px, profile.height_px
    curves = _curves(rng, profile)
    rows = np.arange(h, dtype=np.float64)[:, None]

    img = np.full((h, w), 8.0)
    above_ep = rows < curves["EP"]
    below_en = rows > curves["EN"]
    tissue = ~above_ep & ~below_en
    depth_frac = np.clip((rows - curves["EP"]) / np.maximum(curves["EN"] - curves["EP"], 1.0), 0.0, 1.0)
    img[tissue] = (55.0 * (1.0 - 0.3 * depth_frac))[tissue]
    img[below_en] = 11.0

    for name, amp, sigma in (("EP", 205.0, 1.8), ("BL", 135.0, 1.4), ("EN", 150.0, 1.8)):
        dy = rows - curves[name]
        img += amp * np.exp(-0.5 * (dy / sigma) ** 2)

    # multiplicative speckle
    img *= rng.gamma(6.0, 1.0 / 6.0, size=(h, w))

    # vertical saturation stripe
    x0 = rng.uniform(0.08, 0.92) * w
    stripe_w = rng.uniform(3.0, 10.0)
    stripe = 230.0 * np.exp(-0.5 * ((np.arange(w) - x0) / stripe_w) ** 2)
    img = np.maximum(img, stripe[None, :] * rng.uniform(0.9, 1.0, size=(h, 1)))

    # horizontal glare band
    y0 = rng.uniform(0.05, 0.9) * h
    glare_sigma = rng.uniform(2.0, 5.0)
    img += 60.0 * np.exp(-0.5 * ((rows - y0) / glare_sigma) ** 2)

    image = np.clip(img, 0, 255).astype(np.uint8)
    labels = encode_labels(curves, (h, w), band_px=band_px)
    return BScan(image, profile), labels, curves


def synth_volume(seed, profile: DeviceProfile, n_bscans=None, name="") -> Volume:
    """A deterministic volume of independent phantom B-scans."""
    n = profile.bscans_per_volume if n_bscans is None else int(n_bscans)
    if n < 1:
        raise ValueError("a volume needs at least one B-scan")
    scans, labels, curves = [], [], []
    for i in range(n):
        child = np.random.SeedSequence((seed, i))
        bscan, lab, cur = synth_phantom(child, profile)
        scans.append(bscan.intensities)
        labels.append(lab)
        curves.append(cur)
    return Volume(profile, scans, labels, curves, name=name)
