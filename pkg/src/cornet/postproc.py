"""Boundary curve extraction and robust locally weighted regression.

Per-pixel class predictions are reduced to one observation per column (the
centroid row of that interface's pixels), then smoothed with LOWESS: a
locally weighted linear regression using tricube distance weights over the
nearest ``frac * width`` neighbours, robustified by bisquare reweighting
passes (Cleveland-style). The fit is evaluated at every integer column;
columns outside the observed span extrapolate with the nearest local model.
"""

from dataclasses import dataclass

import numpy as np

from .data import CLASS_OF, DeviceProfile


class FitError(ValueError):
    """Raised when an interface has too few points to fit."""


@dataclass
class ColumnPoints:
    """At most one observation per column, strictly increasing x."""

    interface: str
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class BoundaryCurve:
    """One fitted y per column, with the device spacing for micron units."""

    interface: str
    y_of_x: np.ndarray
    profile: DeviceProfile = None

    @property
    def width(self):
        return len(self.y_of_x)


def extract_points(labels: np.ndarray, interface: str) -> ColumnPoints:
    """Per-column centroid row of the interface's pixels.

    Columns without any pixel of the class are omitted; an entirely absent
    interface yields an empty point set (callers decide whether that is fatal).
    """
    if interface not in CLASS_OF:
        raise ValueError(f"unknown interface {interface!r}")
    mask = labels == CLASS_OF[interface]
    counts = mask.sum(axis=0)
    rows = np.arange(labels.shape[0], dtype=np.float64)[:, None]
    sums = (mask * rows).sum(axis=0)
    has = counts > 0
    x = np.nonzero(has)[0].astype(np.float64)
    y = sums[has] / counts[has]
    return ColumnPoints(interface, x, y)


def _window_starts(x, queries, k):
    n = len(x)
    starts = np.empty(len(queries), dtype=np.int64)
    s = 0
    for i, q in enumerate(queries):
        while s + k < n and (x[s + k] - q) < (q - x[s]):
            s += 1
        starts[i] = s
    return starts


def _weighted_fit(x, y, delta, queries, k):
    starts = _window_starts(x, queries, k)
    idx = starts[:, None] + np.arange(k)[None, :]
    dx = x[idx] - queries[:, None]
    h = np.maximum(np.abs(dx).max(axis=1, keepdims=True), 1e-12)
    w = np.clip(1.0 - np.abs(dx / h) ** 3, 0.0, None) ** 3
    w *= delta[idx]
    yy = y[idx]
    sw = w.sum(axis=1)
    swx = (w * dx).sum(axis=1)
    swy = (w * yy).sum(axis=1)
    swxx = (w * dx * dx).sum(axis=1)
    swxy = (w * dx * yy).sum(axis=1)
    denom = sw * swxx - swx * swx
    safe = np.abs(denom) > 1e-12 * np.maximum(sw * swxx, 1e-300)
    beta1 = np.where(safe, (sw * swxy - swx * swy) / np.where(safe, denom, 1.0), 0.0)
    beta0 = np.where(sw > 0, (swy - beta1 * swx) / np.where(sw > 0, sw, 1.0), np.nan)
    return beta0, (w > 0).sum(axis=1)


def _local_linear(x, y, delta, queries, k):
    """Tricube-weighted linear fit at each query; returns fitted values.

    Windows whose robustness weights all vanished (an outlier burst can take
    a whole neighbourhood down) are refit with progressively wider windows.
    """
    n = len(x)
    fitted, survivors = _weighted_fit(x, y, delta, queries, k)
    starved = ~np.isfinite(fitted) | (survivors < 2)
    kk = k
    while np.any(starved) and kk < n:
        kk = min(n, 2 * kk)
        refit, surv = _weighted_fit(x, y, delta, queries[starved], kk)
        fitted[starved] = refit
        sub = starved.copy()
        starved[sub] = ~np.isfinite(refit) | (surv < 2)
    if np.any(starved):
        # every robustness weight died; fall back to plain tricube
        refit, _ = _weighted_fit(x, y, np.ones(n), queries[starved], k)
        fitted[starved] = refit
    return fitted


def fit_lowess(pts: ColumnPoints, frac=0.15, robust_iters=2, width=None,
               profile: DeviceProfile = None, clip_height=None) -> BoundaryCurve:
    """Fit a robust smooth curve through column points, one y per column.

    ``width`` defaults to the span implied by the points; the result is
    defined at every integer column 0..width-1 regardless of gaps.
    """
    if width is None:
        raise ValueError("fit_lowess needs the target image width")
    order = np.argsort(pts.x, kind="stable")
    x = np.asarray(pts.x, dtype=np.float64)[order]
    y = np.asarray(pts.y, dtype=np.float64)[order]
    n = len(x)
    need = max(10, int(np.ceil(frac * width)))
    if n < need:
        raise FitError(
            f"interface {pts.interface}: only {n} column points, need at least {need} to fit"
        )
    if np.any(np.diff(x) <= 0):
        raise ValueError(f"interface {pts.interface}: duplicate column observations")
    k = min(n, need)
    delta = np.ones(n)
    # floor the residual scale so float noise on near-exact fits cannot
    # down-weight legitimate points
    scale_floor = 1e-6 * (1.0 + float(np.median(np.abs(y))))
    for _ in range(max(0, int(robust_iters))):
        fitted = _local_linear(x, y, delta, x, k)
        resid = y - fitted
        s = max(float(np.median(np.abs(resid))), scale_floor)
        u = resid / (6.0 * s)
        delta = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
    queries = np.arange(width, dtype=np.float64)
    curve = _local_linear(x, y, delta, queries, k)
    if clip_height is not None:
        curve = np.clip(curve, 0.0, np.nextafter(float(clip_height), 0.0))
    return BoundaryCurve(pts.interface, curve, profile)


def fit_all_interfaces(labels: np.ndarray, profile: DeviceProfile = None,
                       frac=0.15, robust_iters=2, strict=True) -> dict:
    """Extract and fit every interface of a label map; returns name -> curve.

    With strict=False, interfaces with too few points are omitted instead of
    raising (the ablation harness tolerates under-segmenting variants).
    """
    h, w = labels.shape
    curves = {}
    for name in CLASS_OF:
        pts = extract_points(labels, name)
        try:
            curves[name] = fit_lowess(pts, frac=frac, robust_iters=robust_iters,
                                      width=w, profile=profile, clip_height=h)
        except FitError:
            if strict:
                raise
    return curves
