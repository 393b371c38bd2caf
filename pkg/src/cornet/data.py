"""Volume and label I/O, width-wise slicing, and label rasterization.

Images are 8-bit grayscale B-scans stored as binary PGM (P5); label maps use
the same container with raw values 0-3 (0 background, 1 EP, 2 BL, 3 EN).
A volume directory holds a manifest.json naming the per-scan files, the
acquiring device's pixel spacing, and optional label/truth-curve files.
Truth curves are CSV with header ``interface,x_px,y_px``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

INTERFACES = ("EP", "BL", "EN")
CLASS_OF = {"EP": 1, "BL": 2, "EN": 3}


class DataError(ValueError):
    """Raised for malformed volumes, labels, manifests, or curve files."""


@dataclass(frozen=True)
class DeviceProfile:
    """Physical pixel spacing and nominal volume geometry of one scan setting."""

    name: str
    axial_um_per_px: float
    lateral_um_per_px: float
    width_px: int
    height_px: int
    bscans_per_volume: int

    def __post_init__(self):
        if self.axial_um_per_px <= 0 or self.lateral_um_per_px <= 0:
            raise DataError(f"profile {self.name}: spacings must be positive")
        if self.width_px <= 0 or self.height_px <= 0 or self.bscans_per_volume <= 0:
            raise DataError(f"profile {self.name}: dimensions must be positive")

    def to_dict(self):
        return {
            "name": self.name,
            "axial_um_per_px": self.axial_um_per_px,
            "lateral_um_per_px": self.lateral_um_per_px,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "bscans_per_volume": self.bscans_per_volume,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


BUILTIN_PROFILES = {
    "device1-6mm": DeviceProfile("Device1-6mm", 3.4, 6.0, 1000, 1024, 50),
    "device2-6mm": DeviceProfile("Device2-6mm", 1.3, 15.0, 400, 1024, 50),
    "device2-3mm": DeviceProfile("Device2-3mm", 1.3, 7.5, 400, 1024, 50),
}


def get_profile(name: str) -> DeviceProfile:
    key = name.lower()
    if key not in BUILTIN_PROFILES:
        raise DataError(f"unknown profile {name!r}; built-ins: {', '.join(sorted(BUILTIN_PROFILES))}")
    return BUILTIN_PROFILES[key]


@dataclass
class BScan:
    intensities: np.ndarray  # (height, width) uint8
    profile: DeviceProfile

    @property
    def height(self):
        return self.intensities.shape[0]

    @property
    def width(self):
        return self.intensities.shape[1]


@dataclass
class Volume:
    profile: DeviceProfile
    bscans: list  # of (H, W) uint8 arrays
    labels: list = None  # of (H, W) uint8 arrays, optional
    curves: list = None  # of {interface: y per column}, optional
    name: str = ""


def validate_labels(labels: np.ndarray, strict_order=False, source="labels"):
    """Check the {0,1,2,3} value set and optionally EP<BL<EN column ordering."""
    values = np.unique(labels)
    bad = set(values.tolist()) - {0, 1, 2, 3}
    if bad:
        raise DataError(f"{source}: label values outside {{0,1,2,3}}: {sorted(bad)}")
    if strict_order:
        rows = np.arange(labels.shape[0])[:, None]
        prev_max = np.full(labels.shape[1], -np.inf)
        for name in INTERFACES:
            mask = labels == CLASS_OF[name]
            present = mask.any(axis=0)
            lo = np.where(mask, rows, np.inf).min(axis=0)
            hi = np.where(mask, rows, -np.inf).max(axis=0)
            if np.any(present & (lo <= prev_max)):
                raise DataError(f"{source}: interface {name} overlaps or inverts column ordering")
            prev_max = np.where(present, hi, prev_max)


# ---------------------------------------------------------------------------
# width-wise slicing and reassembly
# ---------------------------------------------------------------------------


@dataclass
class SliceSet:
    """Stride-tile coverage of an image width; the last tile is right-aligned."""

    offsets: list
    tile_w: int
    original_width: int

    def tiles_of(self, image: np.ndarray):
        return [image[..., off : off + self.tile_w] for off in self.offsets]


def slice_width(image: np.ndarray, tile_w=256) -> SliceSet:
    """Cover the width with stride-``tile_w`` tiles.

    When the width is not a multiple of the tile, the final tile is aligned
    to the right edge and overlaps its predecessor.
    """
    w = image.shape[-1]
    if w < tile_w:
        raise DataError(f"image width {w} smaller than tile width {tile_w}")
    n = max(1, -(-(w - tile_w) // tile_w) + 1)
    offsets = [k * tile_w for k in range(n - 1)] + [w - tile_w]
    if len(offsets) >= 2 and offsets[-1] == offsets[-2]:
        offsets.pop()
    return SliceSet(offsets, tile_w, w)


def reassemble(pred_tiles, slices: SliceSet) -> np.ndarray:
    """Average overlapping per-tile score maps back to the original width."""
    if len(pred_tiles) != len(slices.offsets):
        raise DataError(f"got {len(pred_tiles)} tiles for {len(slices.offsets)} offsets")
    ref = pred_tiles[0].shape
    for t in pred_tiles[1:]:
        if t.shape != ref:
            raise DataError(f"tile shape mismatch: {t.shape} vs {ref}")
    if ref[-1] != slices.tile_w:
        raise DataError(f"tile width {ref[-1]} does not match slice width {slices.tile_w}")
    full_shape = ref[:-1] + (slices.original_width,)
    acc = np.zeros(full_shape, dtype=np.float64)
    count = np.zeros(slices.original_width, dtype=np.float64)
    for tile, off in zip(pred_tiles, slices.offsets):
        acc[..., off : off + slices.tile_w] += tile
        count[off : off + slices.tile_w] += 1
    if np.any(count == 0):
        raise DataError("reassembly left unwritten columns")
    return acc / count


def scores_to_labels(scores: np.ndarray) -> np.ndarray:
    """Argmax over the leading class axis."""
    return scores.argmax(axis=0).astype(np.uint8)


# ---------------------------------------------------------------------------
# ground-truth rasterization
# ---------------------------------------------------------------------------


def encode_labels(curves: dict, shape, band_px=3) -> np.ndarray:
    """Rasterize per-interface curves as bands of ``band_px`` rows.

    Bands are centered on the rounded curve and clipped to the image.
    Overlapping bands mean the curves are too close together and raise.
    """
    h, w = shape
    if band_px < 1:
        raise DataError("band_px must be at least 1")
    for name in INTERFACES:
        if name not in curves:
            raise DataError(f"missing curve for interface {name}")
        if len(curves[name]) != w:
            raise DataError(f"curve {name} covers {len(curves[name])} columns, image has {w}")
    labels = np.zeros((h, w), dtype=np.uint8)
    lo_off = (band_px - 1) // 2
    hi_off = band_px // 2
    cols = np.arange(w)
    for name in INTERFACES:
        center = np.rint(np.asarray(curves[name])).astype(np.int64)
        for dy in range(-lo_off, hi_off + 1):
            rows = center + dy
            ok = (rows >= 0) & (rows < h)
            if np.any(labels[rows[ok], cols[ok]] != 0):
                raise DataError(f"interface band {name} overlaps another band; curves too close")
            labels[rows[ok], cols[ok]] = CLASS_OF[name]
    return labels


# ---------------------------------------------------------------------------
# PGM, curves CSV, manifests
# ---------------------------------------------------------------------------


def write_pgm(path, image: np.ndarray):
    if image.ndim != 2:
        raise DataError(f"PGM images are 2-d, got shape {image.shape}")
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    if len(data) - pos < h * w:
        raise DataError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).copy()


def write_curves(path, curves: dict):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["interface", "x_px", "y_px"])
        for name in INTERFACES:
            if name not in curves:
                continue
            for x, y in enumerate(np.asarray(curves[name])):
                writer.writerow([name, x, f"{float(y):.6f}"])


def read_curves(path) -> dict:
    pts = {name: [] for name in INTERFACES}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != ["interface", "x_px", "y_px"]:
            raise DataError(f"{path}: expected header interface,x_px,y_px")
        for row in reader:
            if not row:
                continue
            name = row[0].strip()
            if name not in CLASS_OF:
                raise DataError(f"{path}: unknown interface {name!r}")
            pts[name].append((float(row[1]), float(row[2])))
    curves = {}
    for name, rows in pts.items():
        if not rows:
            continue
        rows.sort(key=lambda t: t[0])
        xs = np.array([r[0] for r in rows])
        ys = np.array([r[1] for r in rows])
        curves[name] = (xs, ys)
    return curves


def curves_to_dense(curves: dict, width: int) -> dict:
    """Per-column y arrays from (x, y) curve points covering every column."""
    dense = {}
    for name, (xs, ys) in curves.items():
        if len(xs) != width or not np.array_equal(xs, np.arange(width)):
            raise DataError(f"curve {name} does not cover every column 0..{width - 1}")
        dense[name] = ys
    return dense


def save_volume(vol: Volume, directory):
    """Write scans, optional labels/curves, and manifest.json into a directory."""
    os.makedirs(directory, exist_ok=True)
    os.makedirs(os.path.join(directory, "bscans"), exist_ok=True)
    manifest = {"profile": vol.profile.to_dict(), "bscans": []}
    if vol.labels is not None:
        os.makedirs(os.path.join(directory, "labels"), exist_ok=True)
        manifest["labels"] = []
    if vol.curves is not None:
        os.makedirs(os.path.join(directory, "curves"), exist_ok=True)
        manifest["curves"] = []
    for i, scan in enumerate(vol.bscans):
        rel = f"bscans/{i:04d}.pgm"
        write_pgm(os.path.join(directory, rel), scan)
        manifest["bscans"].append(rel)
        if vol.labels is not None:
            rel = f"labels/{i:04d}.pgm"
            write_pgm(os.path.join(directory, rel), vol.labels[i])
            manifest["labels"].append(rel)
        if vol.curves is not None:
            rel = f"curves/{i:04d}.csv"
            write_curves(os.path.join(directory, rel), vol.curves[i])
            manifest["curves"].append(rel)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_volume(manifest_path) -> Volume:
    """Load a volume; dimensions are validated against its profile."""
    manifest_path = str(manifest_path)
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    base = os.path.dirname(manifest_path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    profile = DeviceProfile.from_dict(manifest["profile"])
    expected = (profile.height_px, profile.width_px)
    bscans = []
    for rel in manifest["bscans"]:
        img = read_pgm(os.path.join(base, rel))
        if img.shape != expected:
            raise DataError(f"{rel}: shape {img.shape} does not match profile {profile.name} {expected}")
        bscans.append(img)
    labels = None
    if "labels" in manifest:
        labels = []
        for rel in manifest["labels"]:
            lab = read_pgm(os.path.join(base, rel))
            if lab.shape != expected:
                raise DataError(f"{rel}: shape {lab.shape} does not match profile {profile.name} {expected}")
            validate_labels(lab, source=rel)
            labels.append(lab)
    curves = None
    if "curves" in manifest:
        curves = []
        for rel in manifest["curves"]:
            raw = read_curves(os.path.join(base, rel))
            curves.append(curves_to_dense(raw, profile.width_px))
    return Volume(profile, bscans, labels, curves, name=os.path.basename(os.path.abspath(base)))


def save_labelmap(path, labels: np.ndarray):
    validate_labels(labels, source=str(path))
    write_pgm(path, labels)


def load_labelmap(path) -> np.ndarray:
    labels = read_pgm(path)
    validate_labels(labels, source=str(path))
    return labels
