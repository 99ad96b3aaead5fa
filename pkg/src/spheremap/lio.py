"""Reference LiDAR-inertial odometry pipeline.

Deliberately minimal: strapdown IMU propagation for the between-scan
prior, per-point deskewing, scan-to-map point-to-plane Gauss-Newton
registration over a voxel-hashed map, fixed (configured) IMU biases.
No iterated Kalman filter, no loop closure -- the smallest pipeline that
exhibits the failure modes of interest (registration fallbacks under
fast rotation, slow map bending).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRegistrationError, InputError
from .geom import (
    PointCloud,
    Pose,
    pose_compose,
    quat_conjugate,
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    quat_to_rotvec,
    transform_cloud,
    voxel_downsample,
)
from .sensors import ImuSample

_KEY_OFFSET = 1 << 20
_KEY_LIMIT = 1 << 20


@dataclass
class NavState:
    pose: Pose
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.b_g = np.asarray(self.b_g, dtype=float).reshape(3)
        self.b_a = np.asarray(self.b_a, dtype=float).reshape(3)


@dataclass
class PlaneFit:
    normal: np.ndarray
    d: float
    rms: float
    valid: bool


@dataclass
class RegistrationReport:
    iterations: int
    cost: float
    matched: int
    # (cost before, cost after) per accepted Gauss-Newton step
    history: list = field(default_factory=list)


@dataclass
class ScanReport:
    index: int
    t: float
    iterations: int
    cost: float
    matched: int
    fallback: bool


def imu_propagate(s: NavState, samples: list[ImuSample], gravity: float = 9.81) -> NavState:
    """Strapdown propagation through a time-ordered IMU batch.

    Orientation integrates the bias-corrected gyro with a quaternion
    exponential per step; velocity and position use midpoint integration
    of the bias-corrected specific force rotated to the world frame plus
    gravity.
    """
    if not samples:
        return NavState(pose=Pose(t=s.pose.t, q=s.pose.q, p=s.pose.p), v=s.v, b_g=s.b_g, b_a=s.b_a)
    times = [m.t for m in samples]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        raise InputError("IMU samples must be strictly time-ordered")
    if times[0] <= s.pose.t:
        raise InputError("IMU batch must start after the state time")

    g_vec = np.array([0.0, 0.0, -gravity])
    q = s.pose.q.copy()
    p = s.pose.p.copy()
    v = s.v.copy()
    t = s.pose.t
    prev = samples[0]  # zero-order hold into the first interval
    for m in samples:
        dt = m.t - t
        w_mid = 0.5 * (prev.gyro + m.gyro) - s.b_g
        q_new = quat_normalize(quat_multiply(q, quat_from_rotvec(w_mid * dt)))
        a0 = quat_rotate(q, prev.accel - s.b_a)
        a1 = quat_rotate(q_new, m.accel - s.b_a)
        a_w = 0.5 * (a0 + a1) + g_vec
        p = p + v * dt + 0.5 * a_w * dt * dt
        v = v + a_w * dt
        q = q_new
        t = m.t
        prev = m
    return NavState(pose=Pose(t=t, q=q, p=p), v=v, b_g=s.b_g, b_a=s.b_a)


def deskew(scan, pose_start: Pose, pose_end: Pose) -> PointCloud:
    """Motion-compensate a scan into the frame at pose_end.

    Each point is moved with the pose interpolated at its own timestamp
    (slerp on rotation, lerp on translation).
    """
    cloud = scan.cloud
    if len(cloud) == 0:
        return PointCloud(points=np.empty((0, 3)))
    span = pose_end.t - pose_start.t
    if span <= 0:
        u = np.zeros(len(cloud))
    else:
        t_pt = scan.t_start + cloud.time_offsets
        u = np.clip((t_pt - pose_start.t) / span, 0.0, 1.0)

    q0, q1 = pose_start.q, pose_end.q
    if float(np.dot(q0, q1)) < 0.0:
        q1 = -q1
    rv = quat_to_rotvec(quat_multiply(quat_conjugate(q0), q1))
    q_i = quat_multiply(q0, quat_from_rotvec(u[:, None] * rv[None, :]))
    p_i = pose_start.p + u[:, None] * (pose_end.p - pose_start.p)
    world = quat_rotate(q_i, cloud.points) + p_i
    R_end = quat_to_matrix(pose_end.q)
    local = (world - pose_end.p) @ R_end
    return PointCloud(
        points=local,
        time_offsets=None if cloud.time_offsets is None else cloud.time_offsets.copy(),
        intensities=None if cloud.intensities is None else cloud.intensities.copy(),
    )


def fit_plane(neighbors: np.ndarray, rms_max: float = 0.05) -> PlaneFit:
    """Least-squares plane: centroid plus smallest principal direction.

    Valid iff the fit RMS is below rms_max and the points actually span a
    plane (collinear sets are flagged invalid).
    """
    pts = np.asarray(neighbors, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise InputError(f"plane fit needs at least 4 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    diff = pts - centroid
    cov = diff.T @ diff / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, 0]
    # deterministic sign: largest-magnitude component positive
    k = int(np.argmax(np.abs(normal)))
    if normal[k] < 0:
        normal = -normal
    rms = math.sqrt(max(float(evals[0]), 0.0))
    valid = rms < rms_max and float(evals[1]) > 1e-9
    return PlaneFit(normal=normal, d=-float(normal @ centroid), rms=rms, valid=valid)


class VoxelMap:
    """Hash of voxel index -> up to k_max points (first-K retention)."""

    def __init__(self, voxel_size: float = 0.5, k_max: int = 20):
        if voxel_size <= 0 or k_max < 1:
            raise InputError("voxel_size must be positive and k_max >= 1")
        self.voxel_size = voxel_size
        self.k_max = k_max
        self._rows: dict[int, int] = {}
        self._pts = np.zeros((0, k_max, 3))
        self._counts = np.zeros(0, dtype=np.int64)
        self._keys = np.zeros((0, 3), dtype=np.int64)
        # sorted packed-key view for vectorized lookups, rebuilt lazily
        self._sorted_keys = np.zeros(0, dtype=np.int64)
        self._sorted_rows = np.zeros(0, dtype=np.int64)
        self._dirty = False

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def n_points(self) -> int:
        return int(self._counts.sum())

    def _pack(self, idx: np.ndarray) -> np.ndarray:
        if np.any(np.abs(idx) >= _KEY_LIMIT):
            raise InputError("point outside the supported map extent")
        return (
            ((idx[..., 0] + _KEY_OFFSET) << 42)
            | ((idx[..., 1] + _KEY_OFFSET) << 21)
            | (idx[..., 2] + _KEY_OFFSET)
        )

    def _grow(self, extra: int) -> None:
        n = len(self._pts)
        cap = max(64, n + extra, 2 * n)
        pts = np.zeros((cap, self.k_max, 3))
        pts[:n] = self._pts
        counts = np.zeros(cap, dtype=np.int64)
        counts[:n] = self._counts
        keys = np.zeros((cap, 3), dtype=np.int64)
        keys[:n] = self._keys
        self._pts, self._counts, self._keys = pts, counts, keys

    def insert(self, points: np.ndarray) -> None:
        """Append points per voxel up to k_max; excess dropped in input order."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            return
        idx = np.floor(points / self.voxel_size).astype(np.int64)
        packed = self._pack(idx)
        order = np.argsort(packed, kind="stable")
        if len(self._rows) + len(points) > len(self._pts):
            self._grow(len(points))
        rows_map = self._rows
        pts_arr, counts = self._pts, self._counts
        i = 0
        n = len(points)
        while i < n:
            j = i
            key = packed[order[i]]
            while j < n and packed[order[j]] == key:
                j += 1
            row = rows_map.get(key, -1)
            if row < 0:
                row = len(rows_map)
                if row >= len(pts_arr):
                    self._grow(n)
                    pts_arr, counts = self._pts, self._counts
                rows_map[key] = row
                self._keys[row] = idx[order[i]]
            have = counts[row]
            space = self.k_max - have
            if space > 0:
                take = order[i : i + min(space, j - i)]
                pts_arr[row, have : have + len(take)] = points[take]
                counts[row] = have + len(take)
            i = j
        self._dirty = True

    def voxel_count(self, idx3) -> int:
        row = self._rows.get(self._pack(np.asarray(idx3, dtype=np.int64)), -1)
        return 0 if row < 0 else int(self._counts[row])

    def all_points(self) -> np.ndarray:
        """Every stored point, ordered by voxel index then insertion."""
        if not self._rows:
            return np.empty((0, 3))
        nrows = len(self._rows)
        order = np.lexsort((self._keys[:nrows, 2], self._keys[:nrows, 1], self._keys[:nrows, 0]))
        chunks = [self._pts[r, : self._counts[r]] for r in order]
        return np.concatenate(chunks, axis=0)

    def _refresh_lookup(self) -> None:
        n = len(self._rows)
        keys = self._pack(self._keys[:n])
        order = np.argsort(keys, kind="stable")
        self._sorted_keys = keys[order]
        self._sorted_rows = order.astype(np.int64)
        self._dirty = False

    def gather_rows(self, query_idx: np.ndarray) -> np.ndarray:
        """Rows of the 27-voxel neighborhood around each query index: (N, 27)."""
        if self._dirty:
            self._refresh_lookup()
        offs = np.array(
            [[dx, dy, dz] for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
            dtype=np.int64,
        )
        neigh = query_idx[:, None, :] + offs[None, :, :]
        packed = self._pack(neigh).reshape(-1)
        pos = np.searchsorted(self._sorted_keys, packed)
        pos = np.clip(pos, 0, max(len(self._sorted_keys) - 1, 0))
        hit = len(self._sorted_keys) > 0
        found = hit & (self._sorted_keys[pos] == packed) if hit else np.zeros(len(packed), bool)
        rows = np.where(found, self._sorted_rows[pos] if hit else -1, -1)
        return rows.reshape(len(query_idx), 27)


def map_insert(vmap: VoxelMap, cloud: PointCloud) -> VoxelMap:
    """Functional wrapper over VoxelMap.insert for a world-frame cloud."""
    vmap.insert(cloud.points)
    return vmap


@dataclass
class RegistrationParams:
    match_radius: float = 0.5
    k_neighbors: int = 10
    min_plane_points: int = 5
    plane_rms_max: float = 0.05
    huber_delta: float = 0.1
    max_iterations: int = 20
    update_tol: float = 1e-6
    min_matches: int = 10
    # correspondences are re-searched once the iterate has moved this far
    # since the last search (plane association is insensitive to smaller
    # motion, and the search dominates runtime)
    refit_dist: float = 0.05
    # optional quadratic anchor to the init pose; the pipeline sets these so
    # directions the scene does not constrain (e.g. along a bare corridor)
    # stay at the IMU prediction instead of wandering
    prior_rot_weight: float = 0.0
    prior_trans_weight: float = 0.0


def _find_correspondences(points_world: np.ndarray, vmap: VoxelMap, prm: RegistrationParams):
    """Per-point plane fits from the 27-voxel neighborhoods.

    Returns (normals (N,3), d (N,), valid (N,)) where valid marks points
    with a usable plane within the match radius.
    """
    n = len(points_world)
    chunk = max(256, 2_000_000 // (27 * vmap.k_max))
    if n > chunk:
        parts = [
            _find_correspondences(points_world[i : i + chunk], vmap, prm)
            for i in range(0, n, chunk)
        ]
        return (
            np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]),
        )
    idx = np.floor(points_world / vmap.voxel_size).astype(np.int64)
    rows = vmap.gather_rows(idx)                          # (N, 27)
    have = rows >= 0
    safe_rows = np.where(have, rows, 0)
    cand = vmap._pts[safe_rows]                           # (N, 27, K, 3)
    k_max = vmap.k_max
    cnt = np.where(have, vmap._counts[safe_rows], 0)      # (N, 27)
    slot_ok = np.arange(k_max)[None, None, :] < cnt[:, :, None]
    cand = cand.reshape(n, 27 * k_max, 3)
    slot_ok = slot_ok.reshape(n, 27 * k_max)

    d2 = np.sum((cand - points_world[:, None, :]) ** 2, axis=2)
    d2 = np.where(slot_ok, d2, np.inf)
    d2 = np.where(d2 <= prm.match_radius**2, d2, np.inf)

    k = prm.k_neighbors
    rows_i = np.arange(n)[:, None]
    part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    dk = d2[rows_i, part]
    inner = np.argsort(dk, axis=1, kind="stable")
    sel = part[rows_i, inner]
    neigh = cand[rows_i, sel]                             # (N, k, 3)
    ok = np.isfinite(d2[rows_i, sel])                     # (N, k)
    counts = ok.sum(axis=1)

    w = ok[:, :, None].astype(float)
    cnts = np.maximum(counts, 1)[:, None]
    mean = (neigh * w).sum(axis=1) / cnts
    diff = (neigh - mean[:, None, :]) * w
    cov = np.einsum("nki,nkj->nij", diff, diff) / cnts[:, :, None]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    # deterministic sign
    kmax_comp = np.argmax(np.abs(normals), axis=1)
    sign = np.sign(normals[np.arange(n), kmax_comp])
    sign = np.where(sign == 0, 1.0, sign)
    normals = normals * sign[:, None]
    rms = np.sqrt(np.maximum(evals[:, 0], 0.0))
    valid = (counts >= prm.min_plane_points) & (rms < prm.plane_rms_max) & (evals[:, 1] > 1e-9)
    d_off = -np.einsum("ni,ni->n", normals, mean)
    return normals, d_off, valid


def point_to_plane_jacobian(points_world: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of r = n.(Exp(w) q + dt) + d at (w, dt) = 0: (N, 6).

    Columns 0..2 are the rotational part (q x n), columns 3..5 the
    translational part (n).
    """
    return np.concatenate([np.cross(points_world, normals), normals], axis=1)


def _huber_cost_weights(r: np.ndarray, delta: float):
    a = np.abs(r)
    quad = a <= delta
    cost = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    w = np.where(quad, 1.0, delta / np.maximum(a, 1e-300))
    return float(cost.sum()), w


def register_point_to_plane(
    cloud: PointCloud,
    vmap: VoxelMap,
    init: Pose,
    prm: RegistrationParams | None = None,
) -> tuple[Pose, RegistrationReport]:
    """Gauss-Newton on a 6-dof perturbation of init, minimizing robustified
    point-to-plane distances against locally fitted map planes.

    Raises DegenerateRegistrationError when fewer than min_matches valid
    correspondences exist (the caller decides the fallback).
    """
    prm = prm or RegistrationParams()
    if len(vmap) == 0:
        raise DegenerateRegistrationError("registration against an empty map")
    pts = cloud.points
    q = init.q.copy()
    p = init.p.copy()
    W_prior = np.concatenate([np.full(3, prm.prior_rot_weight), np.full(3, prm.prior_trans_weight)])
    zeta = np.zeros(6)  # accumulated deviation from init (first order)
    iterations = 0
    cost = 0.0
    matched = 0
    history = []
    nv = dv = pv = None
    fresh = False
    moved = np.inf
    for it in range(prm.max_iterations):
        iterations = it + 1
        if moved > prm.refit_dist:
            world = quat_rotate(q, pts) + p
            normals, d_off, valid = _find_correspondences(world, vmap, prm)
            matched = int(valid.sum())
            if matched < prm.min_matches:
                raise DegenerateRegistrationError(
                    f"only {matched} valid correspondences (need {prm.min_matches})"
                )
            nv = normals[valid]
            dv = d_off[valid]
            pv = pts[valid]
            fresh = True
            moved = 0.0
        wv = quat_rotate(q, pv) + p
        r = np.einsum("ni,ni->n", nv, wv) + dv
        huber, w = _huber_cost_weights(r, prm.huber_delta)
        cost = huber + 0.5 * float(W_prior @ (zeta * zeta))
        J = point_to_plane_jacobian(wv, nv)
        Jw = J * w[:, None]
        H = Jw.T @ J + np.diag(W_prior)
        g = Jw.T @ r + W_prior * zeta
        try:
            delta = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise DegenerateRegistrationError(f"normal equations singular: {exc}") from exc

        # step-halving keeps the cost non-increasing on this iteration's
        # correspondence set
        step = delta
        accepted = None
        for _ in range(8):
            dq = quat_from_rotvec(step[:3])
            q_new = quat_normalize(quat_multiply(dq, q))
            p_new = quat_rotate(dq, p) + step[3:]
            wv_new = quat_rotate(q_new, pv) + p_new
            r_new = np.einsum("ni,ni->n", nv, wv_new) + dv
            huber_new, _ = _huber_cost_weights(r_new, prm.huber_delta)
            zeta_new = zeta + step
            cost_new = huber_new + 0.5 * float(W_prior @ (zeta_new * zeta_new))
            if cost_new <= cost + 1e-15:
                accepted = (q_new, p_new, cost_new, zeta_new)
                break
            step = 0.5 * step
        if accepted is None:
            if fresh:
                break  # no descent possible: converged to numerical precision
            moved = np.inf  # stale planes may block descent: force re-search
            continue
        history.append((cost, accepted[2]))
        q, p, cost, zeta = accepted
        step_norm = float(np.linalg.norm(step))
        moved += step_norm
        fresh = False
        if step_norm < prm.update_tol:
            if moved <= prm.refit_dist:
                break
            moved = np.inf  # converged on stale planes: confirm after re-search
    return Pose(t=init.t, q=q, p=p), RegistrationReport(
        iterations=iterations, cost=cost, matched=matched, history=history
    )


def _pipeline_registration_defaults() -> RegistrationParams:
    # inside the pipeline the init pose is an IMU prediction, so anchoring
    # unconstrained directions to it is sound
    return RegistrationParams(prior_rot_weight=25.0, prior_trans_weight=25.0)


@dataclass
class LioConfig:
    register_voxel: float = 0.05
    insert_voxel: float = 0.1
    map_voxel: float = 0.5
    map_k: int = 20
    gravity: float = 9.81
    registration: RegistrationParams = field(default_factory=_pipeline_registration_defaults)


class LioPipeline:
    """Sequential scan processor: propagate -> deskew -> register -> map."""

    def __init__(self, config: LioConfig | None = None, init_pose: Pose | None = None):
        self.config = config or LioConfig()
        self.map = VoxelMap(self.config.map_voxel, self.config.map_k)
        init = init_pose or Pose()
        self.state = NavState(pose=init)
        self.reports: list[ScanReport] = []
        self._index = 0

    def process_scan(self, scan, imu_batch: list[ImuSample]) -> ScanReport:
        cfg = self.config
        if len(self.map) == 0:
            # bootstrap: assume static start, map the first scan at the
            # initial pose
            pose = Pose(t=self._scan_end_time(scan, imu_batch), q=self.state.pose.q, p=self.state.pose.p)
            self._insert(scan.cloud, pose)
            self.state = NavState(pose=pose, v=self.state.v, b_g=self.state.b_g, b_a=self.state.b_a)
            report = ScanReport(self._index, pose.t, 0, 0.0, 0, False)
            self.reports.append(report)
            self._index += 1
            return report

        pose_start = self.state.pose
        propagated = imu_propagate(self.state, imu_batch, cfg.gravity)
        pose_end = propagated.pose
        desk = deskew(scan, pose_start, pose_end)
        reg_cloud = voxel_downsample(desk, cfg.register_voxel)

        fallback = False
        try:
            pose_new, rep = register_point_to_plane(reg_cloud, self.map, pose_end, cfg.registration)
            iterations, cost, matched = rep.iterations, rep.cost, rep.matched
        except DegenerateRegistrationError:
            pose_new = pose_end
            iterations, cost, matched = 0, float("inf"), 0
            fallback = True

        dt = pose_new.t - pose_start.t
        v = (pose_new.p - pose_start.p) / dt if dt > 0 else propagated.v
        self.state = NavState(pose=pose_new, v=v, b_g=self.state.b_g, b_a=self.state.b_a)
        self._insert(desk, pose_new)
        report = ScanReport(self._index, pose_new.t, iterations, cost, matched, fallback)
        self.reports.append(report)
        self._index += 1
        return report

    def _scan_end_time(self, scan, imu_batch) -> float:
        if imu_batch:
            return imu_batch[-1].t
        off = scan.cloud.time_offsets
        return scan.t_start + (float(off[-1]) if off is not None and len(off) else 0.0)

    def _insert(self, local_cloud: PointCloud, pose: Pose) -> None:
        ds = voxel_downsample(local_cloud, self.config.insert_voxel)
        self.map.insert(transform_cloud(ds, pose).points)

    def map_cloud(self) -> PointCloud:
        return PointCloud(points=self.map.all_points())
