"""Parametric indoor scenes, triangle-mesh ray casting, surface sampling.

Scenes are watertight triangle meshes oriented so normals point out of
the interior air volume (room walls outward, pillar faces into the
pillar). That orientation makes the signed divergence volume equal the
enclosed air volume, which the tests use as a watertightness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError, ParseError
from .geom import PointCloud

_RAY_TMIN = 1e-6  # self-hit guard, m
_RAY_CHUNK = 8192


@dataclass
class Scene:
    """Triangle soup (T, 3, 3): triangles[i] = (v0, v1, v2) in meters."""

    triangles: np.ndarray
    reflectivity: np.ndarray | None = None

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=float).reshape(-1, 3, 3)
        if not np.all(np.isfinite(self.triangles)):
            raise InputError("scene contains non-finite vertices")
        if np.any(self.areas() <= 1e-12):
            raise InputError("scene contains degenerate triangles")
        if self.reflectivity is not None:
            self.reflectivity = np.asarray(self.reflectivity, dtype=float).reshape(-1)
            if len(self.reflectivity) != len(self.triangles):
                raise InputError("reflectivity length does not match triangle count")

    def __len__(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        e1 = self.triangles[:, 1] - self.triangles[:, 0]
        e2 = self.triangles[:, 2] - self.triangles[:, 0]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def total_area(self) -> float:
        return float(self.areas().sum())

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.triangles.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def signed_volume(self) -> float:
        """Divergence-theorem volume; equals the air volume for a closed mesh."""
        v0, v1, v2 = self.triangles[:, 0], self.triangles[:, 1], self.triangles[:, 2]
        return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


def _quad(a, b, c, d):
    """Two triangles for the quad a-b-c-d (counter-clockwise seen from +normal)."""
    return [(a, b, c), (a, c, d)]


def _box_tris(lo, hi, inward: bool) -> list:
    """Axis-aligned box faces; inward=False gives outward normals."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    tris = []
    tris += _quad((x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0))  # floor
    tris += _quad((x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1))  # ceiling
    tris += _quad((x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1))  # x = x0
    tris += _quad((x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0))  # x = x1
    tris += _quad((x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0))  # y = y0
    tris += _quad((x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1))  # y = y1
    arr = np.array(tris, dtype=float)
    # orient so normals face away from the box center
    centers = arr.mean(axis=1)
    normals = np.cross(arr[:, 1] - arr[:, 0], arr[:, 2] - arr[:, 0])
    box_center = (np.asarray(lo, dtype=float) + np.asarray(hi, dtype=float)) / 2.0
    flip = np.einsum("ij,ij->i", normals, centers - box_center) < 0
    arr[flip] = arr[flip][:, ::-1]
    if inward:
        arr = arr[:, ::-1]
    return list(arr)


def make_corridor(length: float, width: float, height: float) -> Scene:
    """Closed rectangular tube, +x along length, floor at z=0, centered in plan."""
    if length <= 0 or width <= 0 or height <= 0:
        raise ParameterError("corridor dimensions must be positive")
    tris = _box_tris((-length / 2, -width / 2, 0.0), (length / 2, width / 2, height), inward=False)
    return Scene(triangles=np.array(tris))


def make_hall(
    length: float,
    width: float,
    height: float,
    pillar_grid: int = 0,
    pillar_size: float = 0.4,
) -> Scene:
    """Box room with an n x n grid of square pillars, floor to ceiling."""
    if length <= 0 or width <= 0 or height <= 0:
        raise ParameterError("hall dimensions must be positive")
    if pillar_grid < 0:
        raise ParameterError("pillar grid count must be non-negative")
    tris = _box_tris((-length / 2, -width / 2, 0.0), (length / 2, width / 2, height), inward=False)
    if pillar_grid > 0:
        if pillar_size <= 0:
            raise ParameterError("pillar size must be positive")
        n = pillar_grid
        cx = np.array([-length / 2 + (i + 1) * length / (n + 1) for i in range(n)])
        cy = np.array([-width / 2 + (i + 1) * width / (n + 1) for i in range(n)])
        half = pillar_size / 2
        if np.min(cx) - half <= -length / 2 or np.max(cx) + half >= length / 2:
            raise ParameterError("pillars do not fit inside the hall (length axis)")
        if np.min(cy) - half <= -width / 2 or np.max(cy) + half >= width / 2:
            raise ParameterError("pillars do not fit inside the hall (width axis)")
        if n > 1 and (cx[1] - cx[0] <= pillar_size or cy[1] - cy[0] <= pillar_size):
            raise ParameterError("pillars overlap each other")
        for x in cx:
            for y in cy:
                # inward orientation: normals leave the air region
                tris += _box_tris((x - half, y - half, 0.0), (x + half, y + half, height), inward=True)
    return Scene(triangles=np.array(tris))


def raycast_batch(scene: Scene, origins: np.ndarray, dirs: np.ndarray, max_range: float):
    """Nearest hit per ray; returns (distances (N,), triangle ids (N,)).

    Misses (and hits beyond max_range) get distance inf and id -1.
    Directions must be unit vectors.
    """
    if max_range <= 0:
        raise ParameterError("max_range must be positive")
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ParameterError("ray directions must be unit length")
    n = len(origins)
    t_best = np.full(n, np.inf)
    id_best = np.full(n, -1, dtype=np.int64)
    v0 = scene.triangles[:, 0]
    e1 = scene.triangles[:, 1] - v0
    e2 = scene.triangles[:, 2] - v0
    for start in range(0, n, _RAY_CHUNK):
        sl = slice(start, min(start + _RAY_CHUNK, n))
        o = origins[sl][:, None, :]  # (n, 1, 3)
        d = dirs[sl][:, None, :]
        pvec = np.cross(d, e2[None, :, :])                      # (n, T, 3)
        det = np.einsum("tj,ntj->nt", e1, pvec)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(det) > 1e-12, 1.0 / det, 0.0)
            tvec = o - v0[None, :, :]
            u = np.einsum("ntj,ntj->nt", tvec, pvec) * inv
            qvec = np.cross(tvec, e1[None, :, :])
            v = np.einsum("ntj,ntj->nt", d, qvec) * inv
            t = np.einsum("tj,ntj->nt", e2, qvec) * inv
        eps = 1e-12
        ok = (
            (np.abs(det) > 1e-12)
            & (u >= -eps) & (v >= -eps) & (u + v <= 1.0 + eps)
            & (t > _RAY_TMIN) & (t <= max_range)
        )
        t = np.where(ok, t, np.inf)
        ids = np.argmin(t, axis=1)
        rows = np.arange(t.shape[0])
        tmin = t[rows, ids]
        hit = np.isfinite(tmin)
        t_best[sl] = tmin
        id_best[sl] = np.where(hit, ids, -1)
    return t_best, id_best


def raycast(scene: Scene, origin, direction, max_range: float):
    """Single-ray cast: (distance, triangle id) of the nearest hit, or None."""
    t, tid = raycast_batch(scene, np.asarray(origin)[None, :], np.asarray(direction)[None, :], max_range)
    if tid[0] < 0:
        return None
    return float(t[0]), int(tid[0])


def sample_ground_truth(scene: Scene, density: float, seed: int) -> PointCloud:
    """Uniform area-weighted surface sampling; expected count density*area."""
    if density <= 0:
        raise ParameterError("sampling density must be positive")
    rng = np.random.default_rng(seed)
    areas = scene.areas()
    total = areas.sum()
    n = int(rng.poisson(density * total))
    if n == 0:
        return PointCloud(points=np.empty((0, 3)))
    tri = rng.choice(len(scene), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    over = u + v > 1.0
    u[over] = 1.0 - u[over]
    v[over] = 1.0 - v[over]
    base = scene.triangles[tri]
    pts = base[:, 0] + u[:, None] * (base[:, 1] - base[:, 0]) + v[:, None] * (base[:, 2] - base[:, 0])
    return PointCloud(points=pts)


# ---------------------------------------------------------------------------
# scene files: plain-text vertex/triangle records
#   # comment
#   v <x> <y> <z>
#   t <i> <j> <k> [reflectivity]     (0-based vertex indices)
# ---------------------------------------------------------------------------

def write_scene(scene: Scene, path) -> None:
    verts: dict[tuple, int] = {}
    tri_idx = []
    for tri in scene.triangles:
        row = []
        for v in tri:
            key = (float(v[0]), float(v[1]), float(v[2]))
            if key not in verts:
                verts[key] = len(verts)
            row.append(verts[key])
        tri_idx.append(row)
    with open(path, "w", encoding="ascii") as f:
        f.write("# spheremap scene: v x y z / t i j k [reflectivity]\n")
        for key in verts:
            f.write("v %.9g %.9g %.9g\n" % key)
        for n, row in enumerate(tri_idx):
            if scene.reflectivity is not None:
                f.write("t %d %d %d %.9g\n" % (row[0], row[1], row[2], scene.reflectivity[n]))
            else:
                f.write("t %d %d %d\n" % tuple(row))


def read_scene(path) -> Scene:
    verts = []
    tris = []
    refl = []
    with open(path, "r", encoding="ascii", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "v" and len(parts) == 4:
                    verts.append([float(x) for x in parts[1:]])
                elif parts[0] == "t" and len(parts) in (4, 5):
                    idx = [int(x) for x in parts[1:4]]
                    if any(i < 0 or i >= len(verts) for i in idx):
                        raise ParseError("triangle references unknown vertex", line=lineno)
                    tris.append(idx)
                    refl.append(float(parts[4]) if len(parts) == 5 else np.nan)
                else:
                    raise ParseError(f"unrecognized record {parts[0]!r}", line=lineno)
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad scene record: {exc}", line=lineno) from exc
    if not tris:
        raise ParseError("scene file contains no triangles", line=None)
    varr = np.array(verts)
    tarr = varr[np.array(tris)]
    rarr = np.array(refl)
    return Scene(triangles=tarr, reflectivity=None if np.all(np.isnan(rarr)) else rarr)
