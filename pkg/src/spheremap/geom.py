"""Rigid-body math and point-cloud primitives.

Quaternion convention used across the whole package: Hamilton product,
storage order (w, x, y, z), and q rotates body-frame vectors into the
world frame (world <- body). A pose (q, p) maps a body point v to
q * v + p in the world.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError

_UNIT_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InputError("cannot normalize near-zero quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b; supports broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by quaternion(s) q (..., 4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    # q v q* expanded: v + 2w (u x v) + 2 u x (u x v)
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise InputError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rotvec(r: np.ndarray) -> np.ndarray:
    """Quaternion exponential of rotation vector(s) r (..., 3)."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r, axis=-1, keepdims=True)
    half = 0.5 * angle
    # series for sin(x)/x keeps the small-angle branch smooth
    small = angle < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(angle == 0, 1.0, angle))
    w = np.cos(half)
    return np.concatenate([w, k * r], axis=-1)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    sin_half = np.linalg.norm(q[1:])
    if sin_half < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(sin_half, q[0])
    return q[1:] / sin_half * angle


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0]))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


def slerp(q0: np.ndarray, q1: np.ndarray, u: float) -> np.ndarray:
    """Constant-angular-velocity interpolation along the shorter arc.

    u must lie in [0, 1]; raises ParameterError otherwise.
    """
    if not 0.0 <= u <= 1.0:
        raise ParameterError(f"slerp fraction must be in [0, 1], got {u}")
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:  # shorter arc
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + u * (q1 - q0))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1.0 - u) * theta) / s) * q0 + (np.sin(u * theta) / s) * q1)


def slerp_many(q0: np.ndarray, q1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized slerp between two fixed endpoints for fractions u (N,)."""
    u = np.asarray(u, dtype=float)
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    if float(np.dot(q0, q1)) < 0.0:
        q1 = -q1
    rel = quat_multiply(quat_conjugate(q0), q1)
    rv = quat_to_rotvec(rel)
    return quat_multiply(q0, quat_from_rotvec(u[:, None] * rv[None, :]))


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

@dataclass
class Pose:
    """Timestamped rigid transform: world point = q * body point + p."""

    t: float = 0.0
    q: np.ndarray = field(default_factory=quat_identity)
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = quat_normalize(np.asarray(self.q, dtype=float).reshape(4))
        self.p = np.asarray(self.p, dtype=float).reshape(3).copy()
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise InputError("pose contains non-finite values")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return quat_rotate(self.q, points) + self.p

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.p
        return m


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Transform that applies b first, then a. Keeps a's timestamp."""
    return Pose(t=a.t, q=quat_multiply(a.q, b.q), p=quat_rotate(a.q, b.p) + a.p)


def pose_inverse(a: Pose) -> Pose:
    qinv = quat_conjugate(a.q)
    return Pose(t=a.t, q=qinv, p=-quat_rotate(qinv, a.p))


def pose_interpolate(a: Pose, b: Pose, u: float) -> Pose:
    """Slerp rotation / lerp translation between two poses; u in [0, 1]."""
    return Pose(
        t=a.t + u * (b.t - a.t),
        q=slerp(a.q, b.q, u),
        p=(1.0 - u) * a.p + u * b.p,
    )


class PoseTrack:
    """Time-sorted sequence of poses with batched interpolation.

    Used as the pose source for LiDAR frame generation and as the ground
    truth trajectory record.
    """

    def __init__(self, times, quats, positions):
        self.times = np.asarray(times, dtype=float)
        self.quats = np.asarray(quats, dtype=float)
        self.positions = np.asarray(positions, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise InputError("pose track needs at least one pose")
        if np.any(np.diff(self.times) < 0):
            raise InputError("pose track times must be non-decreasing")
        # enforce hemisphere continuity so per-segment slerp takes short arcs
        q = self.quats.copy()
        for i in range(1, len(q)):
            if np.dot(q[i - 1], q[i]) < 0.0:
                q[i] = -q[i]
        self.quats = q

    @classmethod
    def from_poses(cls, poses) -> "PoseTrack":
        return cls([p.t for p in poses], [p.q for p in poses], [p.p for p in poses])

    def pose_at(self, t: float) -> Pose:
        q, p = self.sample(np.array([t]))
        return Pose(t=t, q=q[0], p=p[0])

    def sample(self, times: np.ndarray):
        """Interpolated (quats (N,4), positions (N,3)) at the given times.

        Times are clamped to the track's span.
        """
        times = np.clip(np.asarray(times, dtype=float), self.times[0], self.times[-1])
        hi = np.searchsorted(self.times, times, side="right")
        hi = np.clip(hi, 1, len(self.times) - 1) if len(self.times) > 1 else np.ones_like(hi)
        if len(self.times) == 1:
            n = len(times)
            return np.tile(self.quats[0], (n, 1)), np.tile(self.positions[0], (n, 1))
        lo = hi - 1
        t0 = self.times[lo]
        t1 = self.times[hi]
        span = np.where(t1 > t0, t1 - t0, 1.0)
        u = np.clip((times - t0) / span, 0.0, 1.0)
        q0 = self.quats[lo]
        q1 = self.quats[hi]
        rel = quat_multiply(quat_conjugate(q0), q1)
        # batched log: rotation vector per segment
        sgn = np.where(rel[:, :1] < 0, -1.0, 1.0)
        rel = rel * sgn
        sin_half = np.linalg.norm(rel[:, 1:], axis=1)
        angle = 2.0 * np.arctan2(sin_half, rel[:, 0])
        with np.errstate(invalid="ignore", divide="ignore"):
            axis = np.where(sin_half[:, None] > 1e-12, rel[:, 1:] / np.where(sin_half == 0, 1.0, sin_half)[:, None], 0.0)
        rv = axis * angle[:, None]
        q = quat_multiply(q0, quat_from_rotvec(u[:, None] * rv))
        p = self.positions[lo] + u[:, None] * (self.positions[hi] - self.positions[lo])
        return quat_normalize(q), p


# ---------------------------------------------------------------------------
# PointCloud
# ---------------------------------------------------------------------------

@dataclass
class PointCloud:
    """Points in meters with optional per-point channels.

    All optional channels, when present, have exactly one entry per point.
    Coordinates must be finite.
    """

    points: np.ndarray
    time_offsets: np.ndarray | None = None
    intensities: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise InputError("point cloud contains non-finite coordinates")
        n = len(self.points)
        if self.time_offsets is not None:
            self.time_offsets = np.asarray(self.time_offsets, dtype=float).reshape(-1)
            if len(self.time_offsets) != n:
                raise InputError("time_offsets length does not match point count")
        if self.intensities is not None:
            self.intensities = np.asarray(self.intensities, dtype=float).reshape(-1)
            if len(self.intensities) != n:
                raise InputError("intensities length does not match point count")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != n:
                raise InputError("colors length does not match point count")

    def __len__(self) -> int:
        return len(self.points)

    def select(self, mask) -> "PointCloud":
        """Sub-cloud for a boolean mask or index array; channels preserved."""
        return PointCloud(
            points=self.points[mask],
            time_offsets=None if self.time_offsets is None else self.time_offsets[mask],
            intensities=None if self.intensities is None else self.intensities[mask],
            colors=None if self.colors is None else self.colors[mask],
        )


def transform_cloud(c: PointCloud, T: Pose) -> PointCloud:
    """Map every point by q*x + p; optional channels carried over."""
    return PointCloud(
        points=T.apply(c.points) if len(c) else c.points.copy(),
        time_offsets=None if c.time_offsets is None else c.time_offsets.copy(),
        intensities=None if c.intensities is None else c.intensities.copy(),
        colors=None if c.colors is None else c.colors.copy(),
    )


def voxel_downsample(c: PointCloud, voxel: float) -> PointCloud:
    """One centroid per occupied voxel, output sorted by voxel index.

    Optional channels are dropped: a centroid has no single source point.
    """
    if voxel <= 0:
        raise ParameterError(f"voxel size must be positive, got {voxel}")
    if len(c) == 0:
        return PointCloud(points=np.empty((0, 3)))
    idx = np.floor(c.points / voxel).astype(np.int64)
    uniq, inv = np.unique(idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inv, c.points)
    counts = np.bincount(inv, minlength=len(uniq)).astype(float)
    return PointCloud(points=sums / counts[:, None])
