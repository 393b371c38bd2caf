"""Training-time augmentation of (image, label) pairs.

Nine operations: horizontal flip, gamma adjustment, Gaussian noise, Gaussian
blur, median blur, bilateral blur, cropping (crop then resize back), affine
transformation, and elastic deformation. Geometric operations warp image and
label identically with nearest-neighbour label resampling; photometric ones
touch the image only. Every draw comes from the caller's seed, so a given
(seed, sample) always produces the same pair regardless of worker scheduling.
"""

import numpy as np
from scipy import ndimage

ALL_OPS = (
    "hflip",
    "gamma",
    "gauss_noise",
    "gauss_blur",
    "median_blur",
    "bilateral_blur",
    "crop",
    "affine",
    "elastic",
)

OP_PROBABILITY = 0.3


def adjust_gamma(img, gamma):
    if gamma == 1.0:
        return img.copy()
    lut = np.clip(255.0 * (np.arange(256) / 255.0) ** gamma, 0, 255).astype(np.uint8)
    return lut[img]


def bilateral_blur(img, sigma_space=3.0, sigma_range=25.0):
    """Edge-preserving blur; plain shift-and-weigh implementation."""
    radius = max(1, int(round(2 * sigma_space)))
    base = img.astype(np.float64)
    acc = np.zeros_like(base)
    norm = np.zeros_like(base)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            wsp = np.exp(-0.5 * (dy * dy + dx * dx) / sigma_space**2)
            shifted = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
            wr = np.exp(-0.5 * ((shifted - base) / sigma_range) ** 2)
            wgt = wsp * wr
            acc += wgt * shifted
            norm += wgt
    return np.clip(acc / norm, 0, 255).astype(np.uint8)


def crop_pair(img, lbl, top, left, height, width):
    """Crop both arrays and resize back to the original dims."""
    h, w = img.shape
    if height > h or width > w:
        raise ValueError(f"crop {height}x{width} larger than image {h}x{w}")
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ValueError("crop window out of bounds")
    ci = img[top : top + height, left : left + width]
    cl = lbl[top : top + height, left : left + width]
    ys = (np.arange(h) + 0.5) * height / h - 0.5
    xs = (np.arange(w) + 0.5) * width / w - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    out_i = ndimage.map_coordinates(ci.astype(np.float64), grid, order=1, mode="nearest")
    out_l = ndimage.map_coordinates(cl, grid, order=0, mode="nearest")
    return np.clip(out_i, 0, 255).astype(np.uint8), out_l.astype(lbl.dtype)


def affine_pair(img, lbl, rotation_deg=0.0, scale=1.0, tx=0.0, ty=0.0):
    """Rotate/scale about the center plus translate, identically on both."""
    h, w = img.shape
    theta = np.deg2rad(rotation_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # inverse map: output pixel -> source location
    ry = yy - cy - ty
    rx = xx - cx - tx
    src_y = (cos_t * ry + sin_t * rx) / scale + cy
    src_x = (-sin_t * ry + cos_t * rx) / scale + cx
    out_i = ndimage.map_coordinates(img.astype(np.float64), [src_y, src_x], order=1, mode="constant", cval=0.0)
    out_l = ndimage.map_coordinates(lbl, [src_y, src_x], order=0, mode="constant", cval=0)
    return np.clip(out_i, 0, 255).astype(np.uint8), out_l.astype(lbl.dtype)


def elastic_deform(img, lbl, seed, alpha, sigma):
    """Warp both arrays with a smooth random displacement field.

    The field is Gaussian-filtered uniform noise scaled by ``alpha``;
    alpha=0 is the identity.
    """
    if alpha < 0 or sigma <= 0:
        raise ValueError("elastic deformation needs alpha >= 0 and sigma > 0")
    rng = np.random.default_rng(seed)
    h, w = img.shape
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(h, w)), sigma) * alpha
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(h, w)), sigma) * alpha
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    coords = [yy + dy, xx + dx]
    out_i = ndimage.map_coordinates(img.astype(np.float64), coords, order=1, mode="reflect")
    out_l = ndimage.map_coordinates(lbl, coords, order=0, mode="reflect")
    return np.clip(out_i, 0, 255).astype(np.uint8), out_l.astype(lbl.dtype)


def augment(img, lbl, seed, ops=None):
    """Apply a random subset of the augmentations, each with probability 0.3.

    Deterministic in (seed, ops). Returns fresh arrays; inputs are untouched.
    """
    if img.shape != lbl.shape:
        raise ValueError(f"image {img.shape} and label {lbl.shape} dims differ")
    chosen = ALL_OPS if ops is None else tuple(o for o in ALL_OPS if o in set(ops))
    unknown = set() if ops is None else set(ops) - set(ALL_OPS)
    if unknown:
        raise ValueError(f"unknown augmentation ops: {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    img = img.copy()
    lbl = lbl.copy()
    for op in chosen:
        if rng.random() >= OP_PROBABILITY:
            continue
        if op == "hflip":
            img = img[:, ::-1].copy()
            lbl = lbl[:, ::-1].copy()
        elif op == "gamma":
            img = adjust_gamma(img, rng.uniform(0.7, 1.5))
        elif op == "gauss_noise":
            sigma = rng.uniform(0.0, 10.0)
            noisy = img.astype(np.float64) + rng.normal(0.0, sigma, size=img.shape) if sigma > 0 else img
            img = np.clip(noisy, 0, 255).astype(np.uint8)
        elif op == "gauss_blur":
            img = np.clip(ndimage.gaussian_filter(img.astype(np.float64), rng.uniform(0.5, 1.5)), 0, 255).astype(np.uint8)
        elif op == "median_blur":
            img = ndimage.median_filter(img, size=int(rng.choice([3, 5])))
        elif op == "bilateral_blur":
            img = bilateral_blur(img)
        elif op == "crop":
            h, w = img.shape
            ch = int(h * rng.uniform(0.9, 1.0))
            cw = int(w * rng.uniform(0.9, 1.0))
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            img, lbl = crop_pair(img, lbl, top, left, ch, cw)
        elif op == "affine":
            img, lbl = affine_pair(
                img,
                lbl,
                rotation_deg=rng.uniform(-5.0, 5.0),
                scale=rng.uniform(0.95, 1.05),
                tx=rng.uniform(-10.0, 10.0),
                ty=rng.uniform(-10.0, 10.0),
            )
        elif op == "elastic":
            sub = int(rng.integers(0, 2**31 - 1))
            img, lbl = elastic_deform(img, lbl, sub, rng.uniform(10.0, 40.0), rng.uniform(6.0, 10.0))
    return img, lbl


def sample_rng_seed(global_seed, sample_index, epoch=0):
    """Stable per-sample seed independent of worker count and scheduling."""
    return np.random.SeedSequence((global_seed, epoch, sample_index)).generate_state(1)[0]
