"""File formats: PLY and XYZ point clouds, JSONL sensor logs, trajectories.

All formats are documented with byte-level examples in docs/formats.md.
Parsers raise ParseError/StructuralError with a location instead of
crashing on malformed input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError, StructuralError
from .geom import PointCloud, Pose

_PLY_TYPES = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def write_ply(cloud: PointCloud, path, mode: str = "binary_le") -> None:
    """float32 x/y/z plus the cloud's optional channels; ascii or binary_le."""
    if mode not in ("ascii", "binary_le"):
        raise InputError(f"unsupported PLY mode {mode!r}")
    props = [("x", "float"), ("y", "float"), ("z", "float")]
    columns = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    formats = ["<f4", "<f4", "<f4"]
    if cloud.colors is not None:
        for k, name in enumerate(("red", "green", "blue")):
            props.append((name, "uchar"))
            columns.append(cloud.colors[:, k])
            formats.append("u1")
    if cloud.intensities is not None:
        props.append(("intensity", "float"))
        columns.append(cloud.intensities)
        formats.append("<f4")
    if cloud.time_offsets is not None:
        props.append(("time", "float"))
        columns.append(cloud.time_offsets)
        formats.append("<f4")

    fmt_line = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    header = ["ply", f"format {fmt_line}", f"element vertex {len(cloud)}"]
    header += [f"property {typ} {name}" for name, typ in props]
    header.append("end_header")

    rec = np.zeros(len(cloud), dtype=[(name, f) for (name, _), f in zip(props, formats)])
    for (name, _), col in zip(props, columns):
        rec[name] = col
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if mode == "binary_le":
            rec.tofile(f)
        else:
            for row in rec:
                fields = []
                for (name, typ) in props:
                    v = row[name]
                    fields.append(str(int(v)) if typ == "uchar" else "%.9g" % float(v))
                f.write((" ".join(fields) + "\n").encode("ascii"))


def read_ply(path) -> PointCloud:
    """Parse ascii / binary little-endian PLY; unknown scalar properties skipped."""
    with open(path, "rb") as f:
        blob = f.read()
    header_end = blob.find(b"end_header")
    if not blob.startswith(b"ply") or header_end < 0:
        raise ParseError("not a PLY file (missing header)", offset=0)
    nl = blob.find(b"\n", header_end)
    if nl < 0:
        raise ParseError("header not terminated", offset=header_end)
    body_offset = nl + 1
    try:
        header_text = blob[:header_end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError("header is not ascii", offset=exc.start) from exc

    fmt = None
    n_vertex = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    pos = 0
    for line in header_text.splitlines():
        stripped = line.strip()
        parts = stripped.split()
        if not parts or parts[0] == "comment":
            pos += len(line) + 1
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise ParseError("malformed format line", offset=pos)
            if parts[1] == "binary_big_endian":
                raise ParseError("big-endian PLY is unsupported", offset=pos)
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unknown PLY format {parts[1]!r}", offset=pos)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError("malformed element line", offset=pos)
            if parts[1] == "vertex":
                in_vertex = True
                try:
                    n_vertex = int(parts[2])
                except ValueError as exc:
                    raise ParseError("bad vertex count", offset=pos) from exc
                if n_vertex < 0:
                    raise ParseError("negative vertex count", offset=pos)
            else:
                if n_vertex is None:
                    raise ParseError("elements before vertex are unsupported", offset=pos)
                in_vertex = False
        elif parts[0] == "property":
            if in_vertex:
                if len(parts) < 2:
                    raise ParseError("malformed property line", offset=pos)
                if parts[1] == "list":
                    raise ParseError("list properties on vertices are unsupported", offset=pos)
                if len(parts) != 3:
                    raise ParseError("malformed property line", offset=pos)
                if parts[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type {parts[1]!r}", offset=pos)
                props.append((parts[2], parts[1]))
        elif parts[0] in ("ply", "end_header"):
            pass
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", offset=pos)
        pos += len(line) + 1
    if fmt is None or n_vertex is None:
        raise ParseError("header missing format or vertex element", offset=0)
    for needed in ("x", "y", "z"):
        if needed not in [n for n, _ in props]:
            raise ParseError(f"vertex element lacks property {needed!r}", offset=0)

    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + {"f": "f4", "d": "f8", "b": "i1", "B": "u1", "h": "i2", "H": "u2", "i": "i4", "I": "u4"}[_PLY_TYPES[t][0]]) for name, t in props])
        need = dtype.itemsize * n_vertex
        if len(blob) - body_offset < need:
            raise ParseError(
                f"truncated body: need {need} bytes, have {len(blob) - body_offset}",
                offset=body_offset,
            )
        rec = np.frombuffer(blob, dtype=dtype, count=n_vertex, offset=body_offset)
    else:
        text = blob[body_offset:].decode("ascii", errors="replace")
        rows = [ln for ln in text.splitlines() if ln.strip()]
        if len(rows) < n_vertex:
            raise ParseError(
                f"truncated body: header declares {n_vertex} vertices, found {len(rows)}",
                offset=body_offset,
            )
        data = np.zeros(n_vertex, dtype=[(name, "f8") for name, _ in props])
        for i in range(n_vertex):
            parts = rows[i].split()
            if len(parts) != len(props):
                raise ParseError(f"vertex row has {len(parts)} fields, expected {len(props)}", offset=body_offset)
            try:
                for (name, _), tok in zip(props, parts):
                    data[name][i] = float(tok)
            except ValueError as exc:
                raise ParseError(f"bad numeric field: {exc}", offset=body_offset) from exc
        rec = data

    names = [n for n, _ in props]
    pts = np.stack([np.asarray(rec["x"], dtype=float), np.asarray(rec["y"], dtype=float), np.asarray(rec["z"], dtype=float)], axis=1)
    if not np.all(np.isfinite(pts)):
        raise ParseError("non-finite coordinates in PLY body", offset=body_offset)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.uint8)
    intensities = np.asarray(rec["intensity"], dtype=float) if "intensity" in names else None
    offsets = np.asarray(rec["time"], dtype=float) if "time" in names else None
    try:
        return PointCloud(points=pts, time_offsets=offsets, intensities=intensities, colors=colors)
    except InputError as exc:
        raise ParseError(f"invalid cloud content: {exc}", offset=body_offset) from exc


# ---------------------------------------------------------------------------
# XYZ
# ---------------------------------------------------------------------------

def write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        for x, y, z in cloud.points:
            f.write("%.9g %.9g %.9g\n" % (x, y, z))


def read_xyz(path) -> PointCloud:
    pts = []
    with open(path, "r", encoding="ascii", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 coordinates, got {len(parts)}", line=lineno)
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"non-numeric token: {exc}", line=lineno) from exc
            if not all(np.isfinite(row)):
                raise ParseError("non-finite coordinate", line=lineno)
            pts.append(row)
    return PointCloud(points=np.array(pts) if pts else np.empty((0, 3)))


# ---------------------------------------------------------------------------
# JSONL sensor logs
# ---------------------------------------------------------------------------

@dataclass
class ImuRecord:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    key_time = property(lambda self: self.t)


@dataclass
class LidarRecord:
    t_start: float
    points: np.ndarray  # (N, 4): x, y, z, time offset

    key_time = property(lambda self: self.t_start)


@dataclass
class TruthRecord:
    t: float
    pose: Pose

    key_time = property(lambda self: self.t)


def write_log(records, path) -> None:
    """One JSON object per line; records must be sorted by their time key."""
    with open(path, "w", encoding="ascii") as f:
        for r in records:
            if isinstance(r, ImuRecord):
                obj = {"type": "imu", "t": r.t, "gyro": list(map(float, r.gyro)), "accel": list(map(float, r.accel))}
            elif isinstance(r, LidarRecord):
                obj = {"type": "lidar", "t_start": r.t_start, "points": np.asarray(r.points, dtype=float).tolist()}
            elif isinstance(r, TruthRecord):
                obj = {
                    "type": "truth",
                    "t": r.t,
                    "pose": {"p": list(map(float, r.pose.p)), "q": list(map(float, r.pose.q))},
                }
            else:
                raise InputError(f"unknown record type {type(r).__name__}")
            f.write(json.dumps(obj) + "\n")


def read_log(path):
    """Returns (records, n_skipped). Unknown types are skipped and counted;
    non-monotone time keys raise StructuralError."""
    records = []
    skipped = 0
    last_t = -np.inf
    with open(path, "r", encoding="ascii", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict) or "type" not in obj:
                raise ParseError("record is not an object with a 'type' field", line=lineno)
            kind = obj["type"]
            try:
                if kind == "imu":
                    rec = ImuRecord(
                        t=float(obj["t"]),
                        gyro=np.asarray(obj["gyro"], dtype=float).reshape(3),
                        accel=np.asarray(obj["accel"], dtype=float).reshape(3),
                    )
                    payload = np.concatenate([rec.gyro, rec.accel])
                elif kind == "lidar":
                    pts = np.asarray(obj["points"], dtype=float)
                    pts = pts.reshape(-1, 4) if pts.size else np.empty((0, 4))
                    rec = LidarRecord(t_start=float(obj["t_start"]), points=pts)
                    payload = pts.reshape(-1)
                elif kind == "truth":
                    pose = obj["pose"]
                    rec = TruthRecord(
                        t=float(obj["t"]),
                        pose=Pose(t=float(obj["t"]), q=pose["q"], p=pose["p"]),
                    )
                    payload = np.concatenate([rec.pose.q, rec.pose.p])
                else:
                    skipped += 1
                    continue
            except (KeyError, TypeError, ValueError, InputError) as exc:
                raise ParseError(f"malformed {kind!r} record: {exc}", line=lineno) from exc
            if not np.isfinite(rec.key_time) or not np.all(np.isfinite(payload)):
                raise ParseError("non-finite record values", line=lineno)
            if rec.key_time < last_t:
                raise StructuralError(
                    f"records out of time order at line {lineno}: {rec.key_time} < {last_t}"
                )
            last_t = rec.key_time
            records.append(rec)
    return records, skipped


# ---------------------------------------------------------------------------
# trajectories: "t x y z qx qy qz qw" per line
# ---------------------------------------------------------------------------

def write_trajectory(poses, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        for pose in poses:
            w, x, y, z = pose.q
            f.write(
                "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n"
                % (pose.t, pose.p[0], pose.p[1], pose.p[2], x, y, z, w)
            )


def read_trajectory(path):
    poses = []
    with open(path, "r", encoding="ascii", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"expected 8 fields, got {len(parts)}", line=lineno)
            try:
                t, x, y, z, qx, qy, qz, qw = (float(p) for p in parts)
            except ValueError as exc:
                raise ParseError(f"non-numeric token: {exc}", line=lineno) from exc
            poses.append(Pose(t=t, q=[qw, qx, qy, qz], p=[x, y, z]))
    return poses
