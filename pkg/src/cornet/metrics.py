"""Boundary position and distance metrics, plus table-style reporting.

Two curve metrics: the mean absolute difference in layer boundary position
(per-column floor-of-mean row difference, averaged over the width, in
pixels) and the Hausdorff distance between the micron-scaled point sets.
Paired two-sided t-tests compare per-volume metric lists between methods.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtr

from .data import DeviceProfile


class MetricError(ValueError):
    pass


@dataclass
class PointSet:
    """(x_px, y_px) points with the device spacing that scales them to microns."""

    points: np.ndarray
    profile: DeviceProfile
    role: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.points.size == 0:
            raise MetricError(f"empty point set{' for ' + self.role if self.role else ''}")

    @classmethod
    def from_curve(cls, curve_y, profile, role=""):
        xs = np.arange(len(curve_y), dtype=np.float64)
        return cls(np.column_stack([xs, np.asarray(curve_y, dtype=np.float64)]), profile, role)


def pixel_to_micron(point, profile: DeviceProfile):
    """(x_px, y_px) -> (x_um, y_um) via lateral/axial spacing."""
    x, y = point
    return (x * profile.lateral_um_per_px, y * profile.axial_um_per_px)


def _column_means_floor(ps: PointSet, width: int):
    xs = np.rint(ps.points[:, 0]).astype(np.int64)
    if xs.min() < 0 or xs.max() >= width:
        raise MetricError(f"point x-coordinates outside [0, {width})")
    counts = np.bincount(xs, minlength=width)
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise MetricError(f"no points at column w={int(missing[0])}")
    sums = np.bincount(xs, weights=ps.points[:, 1], minlength=width)
    return np.floor(sums / counts)


def madlbp(G: PointSet, S: PointSet, width: int) -> float:
    """Mean absolute difference in layer boundary position, in pixels.

    Per column, the mean y of each set is rounded down before the absolute
    difference; the result averages over all ``width`` columns.
    """
    yg = _column_means_floor(G, width)
    ys = _column_means_floor(S, width)
    return float(np.abs(yg - ys).mean())


def hausdorff(G: PointSet, S: PointSet) -> float:
    """Symmetric Hausdorff distance in microns.

    Points are scaled to microns through the shared device profile before
    Euclidean distances; computed brute force over all pairs.
    """
    if G.profile != S.profile:
        raise MetricError(f"profile mismatch: {G.profile.name} vs {S.profile.name}")
    scale = np.array([G.profile.lateral_um_per_px, G.profile.axial_um_per_px])
    a = G.points * scale
    b = S.points * scale
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    directed_g = np.sqrt(d2.min(axis=1)).max()
    directed_s = np.sqrt(d2.min(axis=0)).max()
    return float(max(directed_g, directed_s))


def paired_t_test(a, b):
    """Two-sided paired t-test; returns (t, p).

    All-zero differences return (0.0, 1.0) by convention.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"paired_t_test needs equal-length 1-d lists, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise MetricError("paired_t_test needs at least 2 pairs")
    d = a - b
    if np.all(d == 0):
        return 0.0, 1.0
    sd = d.std(ddof=1)
    if sd == 0:
        return float(np.inf * np.sign(d.mean())), 0.0
    t = d.mean() / (sd / np.sqrt(n))
    p = 2.0 * (1.0 - stdtr(n - 1, abs(t)))
    return float(t), float(p)


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


@dataclass
class ReportCell:
    group: str
    interface: str
    metric: str
    mean: float
    sd: float
    unit: str
    n: int


@dataclass
class MetricsReport:
    """Per-(group, interface) summary cells backed by per-volume values."""

    cells: list
    per_volume: list = field(default_factory=list)
    t_tests: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["group", "interface", "metric", "mean", "sd", "unit"])
            for c in self.cells:
                writer.writerow([c.group, c.interface, c.metric, f"{c.mean:.6f}", f"{c.sd:.6f}", c.unit])

    def to_text(self):
        lines = []
        groups = []
        for c in self.cells:
            if c.group not in groups:
                groups.append(c.group)
        for group in groups:
            lines.append(group)
            lines.append(f"  {'Layer':6s} {'MADLBP (px)':>18s} {'HD (um)':>18s}")
            for iface in ("EP", "BL", "EN"):
                row = [f"  {iface:6s}"]
                for metric in ("madlbp", "hd"):
                    cell = next(
                        (c for c in self.cells if c.group == group and c.interface == iface and c.metric == metric),
                        None,
                    )
                    row.append(f"{cell.mean:8.3f} +- {cell.sd:5.3f}" if cell else f"{'-':>18s}")
                lines.append(" ".join(row))
        return "\n".join(lines)


def build_report(per_volume_metrics, metric_units=(("madlbp", "px"), ("hd", "um"))) -> MetricsReport:
    """Summarize per-volume records into mean +- population sd cells.

    Records are dicts with keys group, volume, interface, and one value per
    metric name. Groups without records are omitted with a warning.
    """
    cells = []
    groups = []
    for rec in per_volume_metrics:
        if rec["group"] not in groups:
            groups.append(rec["group"])
    for group in groups:
        for iface in ("EP", "BL", "EN"):
            sel = [r for r in per_volume_metrics if r["group"] == group and r["interface"] == iface]
            if not sel:
                warnings.warn(f"no volumes for group {group!r} interface {iface}; omitted")
                continue
            for metric, unit in metric_units:
                vals = np.array([r[metric] for r in sel], dtype=np.float64)
                cells.append(ReportCell(group, iface, metric, float(vals.mean()), float(vals.std()), unit, len(vals)))
    return MetricsReport(cells, per_volume=list(per_volume_metrics))
