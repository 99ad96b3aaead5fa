"""Map-accuracy evaluation against a reference cloud.

Statistics follow the published table semantics: the error of a data
point is the Euclidean distance to its nearest reference point, RMSE is
the root of the mean squared distance, the standard deviation is the
population value (so rmse^2 = mean^2 + std^2 holds identically), and
percentiles use the nearest-rank definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, ParameterError
from .geom import PointCloud, Pose, quat_from_matrix, quat_rotate, quat_to_matrix

DEFAULT_MAX_DIST = 0.5   # m
DEFAULT_BIN_WIDTH = 0.01  # m


@dataclass
class ErrorStats:
    n_total: int
    n_matched: int
    mean: float
    std: float
    rmse: float
    p90: float
    p95: float
    bin_width: float
    histogram: np.ndarray  # counts per bin starting at 0

    @property
    def n_unmatched(self) -> int:
        return self.n_total - self.n_matched


def nn_distances(data: PointCloud, model: PointCloud, max_dist: float = DEFAULT_MAX_DIST):
    """Distance of every data point to its nearest model point.

    Distances above max_dist are excluded and counted separately:
    returns (distances of matched points, n_unmatched).
    """
    if len(model) == 0:
        raise InputError("model cloud is empty")
    if max_dist <= 0:
        raise ParameterError("max_dist must be positive")
    if len(data) == 0:
        return np.empty(0), 0
    tree = cKDTree(model.points)
    d, _ = tree.query(data.points, k=1)
    matched = d <= max_dist
    return d[matched], int((~matched).sum())


def nn_distances_brute(data: PointCloud, model: PointCloud, max_dist: float = DEFAULT_MAX_DIST):
    """Reference brute-force path for nn_distances (used as its oracle)."""
    if len(model) == 0:
        raise InputError("model cloud is empty")
    if max_dist <= 0:
        raise ParameterError("max_dist must be positive")
    if len(data) == 0:
        return np.empty(0), 0
    out = np.empty(len(data))
    chunk = max(1, 20_000_000 // max(len(model), 1))
    for i in range(0, len(data), chunk):
        block = data.points[i : i + chunk]
        d2 = np.sum((block[:, None, :] - model.points[None, :, :]) ** 2, axis=2)
        out[i : i + chunk] = np.sqrt(d2.min(axis=1))
    matched = out <= max_dist
    return out[matched], int((~matched).sum())


def percentile(distances, q: float) -> float:
    """Nearest-rank percentile: sorted value at index ceil(q*N) - 1."""
    d = np.asarray(distances, dtype=float).reshape(-1)
    if len(d) == 0:
        raise InputError("percentile of an empty distance set")
    if not 0.0 < q <= 1.0:
        raise ParameterError(f"percentile fraction must be in (0, 1], got {q}")
    srt = np.sort(d)
    return float(srt[int(math.ceil(q * len(d))) - 1])


def error_stats(distances, bin_width: float = DEFAULT_BIN_WIDTH, n_unmatched: int = 0) -> ErrorStats:
    """Population statistics plus a fixed-width histogram starting at 0."""
    d = np.asarray(distances, dtype=float).reshape(-1)
    if len(d) == 0:
        raise InputError("error_stats needs at least one distance")
    if bin_width <= 0:
        raise ParameterError("bin width must be positive")
    mean = float(d.mean())
    std = float(d.std())  # population (ddof=0)
    rmse = float(np.sqrt(np.mean(d**2)))
    n_bins = max(1, int(math.ceil(float(d.max()) / bin_width)))
    counts, _ = np.histogram(d, bins=n_bins, range=(0.0, n_bins * bin_width))
    return ErrorStats(
        n_total=len(d) + n_unmatched,
        n_matched=len(d),
        mean=mean,
        std=std,
        rmse=rmse,
        p90=percentile(d, 0.90),
        p95=percentile(d, 0.95),
        bin_width=bin_width,
        histogram=counts,
    )


def format_report(stats: ErrorStats, label: str = "run", aligned: str = "not applied") -> str:
    """Plain-text report mirroring the published table columns."""
    header = f"{'Run':<24}{'Points(x10^6)':>14}{'Mean(cm)':>10}{'Std(cm)':>10}{'RMSE(cm)':>10}{'P95(cm)':>10}{'P90(cm)':>10}"
    row = (
        f"{label:<24}{stats.n_matched / 1e6:>14.2f}{stats.mean * 100:>10.2f}"
        f"{stats.std * 100:>10.2f}{stats.rmse * 100:>10.2f}"
        f"{stats.p95 * 100:>10.2f}{stats.p90 * 100:>10.2f}"
    )
    return "\n".join(
        [
            header,
            row,
            f"unmatched points (> max dist): {stats.n_unmatched}",
            f"rigid pre-alignment: {aligned}",
        ]
    )


def histogram_csv(stats: ErrorStats) -> str:
    """Two columns: bin upper edge in cm, count."""
    lines = ["bin_upper_cm,count"]
    for i, c in enumerate(stats.histogram):
        lines.append(f"{(i + 1) * stats.bin_width * 100:.4g},{int(c)}")
    return "\n".join(lines) + "\n"


def colorize(cloud: PointCloud, values, mode: str = "error", v_max: float = 1.0) -> PointCloud:
    """Attach an RGB channel: value 0 -> blue, v_max -> red (HSV sweep).

    For mode="height" the caller passes heights as values; both modes clamp
    to [0, v_max] before mapping.
    """
    if mode not in ("error", "height"):
        raise ParameterError(f"unknown colorize mode {mode!r}")
    if v_max <= 0:
        raise ParameterError("v_max must be positive")
    values = np.asarray(values, dtype=float).reshape(-1)
    if len(values) != len(cloud):
        raise InputError("values length does not match point count")
    frac = np.clip(values / v_max, 0.0, 1.0)
    hue = (1.0 - frac) * 240.0  # degrees: blue -> red
    rgb = _hsv_to_rgb(hue)
    return PointCloud(
        points=cloud.points.copy(),
        time_offsets=None if cloud.time_offsets is None else cloud.time_offsets.copy(),
        intensities=None if cloud.intensities is None else cloud.intensities.copy(),
        colors=rgb,
    )


def _hsv_to_rgb(hue_deg: np.ndarray) -> np.ndarray:
    """Full-saturation, full-value HSV to 8-bit RGB."""
    h = (np.asarray(hue_deg, dtype=float) % 360.0) / 60.0
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    v = np.full_like(f, 255.0)
    p = np.zeros_like(f)
    q = (1.0 - f) * 255.0
    t = f * 255.0
    table = np.stack(
        [
            np.stack([v, t, p], axis=1),
            np.stack([q, v, p], axis=1),
            np.stack([p, v, t], axis=1),
            np.stack([p, q, v], axis=1),
            np.stack([t, p, v], axis=1),
            np.stack([v, p, q], axis=1),
        ]
    )
    rgb = table[i, np.arange(len(f))]
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


_AXES = {"x": 0, "y": 1, "z": 2}


def cross_section(cloud: PointCloud, axis: str, center: float, thickness: float) -> PointCloud:
    """Points with |coord - center| <= thickness/2 along the given axis."""
    if axis not in _AXES:
        raise ParameterError(f"axis must be one of x/y/z, got {axis!r}")
    if thickness <= 0:
        raise ParameterError("thickness must be positive")
    mask = np.abs(cloud.points[:, _AXES[axis]] - center) <= thickness / 2.0
    return cloud.select(mask)


@dataclass
class AlignResult:
    pose: Pose
    converged: bool
    iterations: int
    rms: float


def align_rigid(
    data: PointCloud,
    model: PointCloud,
    max_iter: int = 30,
    match_radius: float = 1.0,
) -> AlignResult:
    """Point-to-point ICP returning the transform to apply to data.

    Falls back to (flagged) identity when correspondences degenerate or the
    iteration limit is reached without convergence.
    """
    if len(data) == 0 or len(model) == 0:
        raise InputError("align_rigid needs non-empty clouds")
    tree = cKDTree(model.points)
    q = np.array([1.0, 0.0, 0.0, 0.0])
    p = np.zeros(3)
    prev_rms = np.inf
    for it in range(1, max_iter + 1):
        moved = quat_rotate(q, data.points) + p
        d, j = tree.query(moved, k=1)
        ok = d <= match_radius
        if int(ok.sum()) < 3:
            return AlignResult(Pose(), False, it, float("nan"))
        src = moved[ok]
        dst = model.points[j[ok]]
        rms = float(np.sqrt(np.mean(d[ok] ** 2)))
        sc = src.mean(axis=0)
        dc = dst.mean(axis=0)
        H = (src - sc).T @ (dst - dc)
        U, _, Vt = np.linalg.svd(H)
        S = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
        R = Vt.T @ S @ U.T
        t = dc - R @ sc
        dq = quat_from_matrix(R)
        q = quat_from_matrix(R @ quat_to_matrix(q))
        p = R @ p + t
        step = np.linalg.norm(t) + 2.0 * np.linalg.norm(dq[1:])
        if step < 1e-10 or abs(prev_rms - rms) < 1e-12:
            return AlignResult(Pose(q=q, p=p), True, it, rms)
        prev_rms = rms
    return AlignResult(Pose(), False, max_iter, prev_rms)
