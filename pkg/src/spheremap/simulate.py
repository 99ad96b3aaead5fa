"""Scripted closed-loop simulation and sensor-log replay through the LIO
pipeline. Both are deterministic given an explicit seed."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .control import PidState, drive_controller
from .dynamics import DriveCommand, SphereState, derivatives, ground_pose, step_rk4
from .errors import ParseError, StructuralError
from .geom import Pose, PoseTrack
from .io import ImuRecord, LidarRecord, TruthRecord
from .lio import LioPipeline
from .sensors import ImuSample, ImuSimulator, LidarScan, lidar_frame
from .geom import PointCloud
from .world import Scene


@dataclass
class ScriptPoint:
    t: float
    target_pitch: float  # rad
    steer: float         # rad


def load_script(path) -> list[ScriptPoint]:
    """JSON array of {"t", "target_pitch_rad", "steer_rad"} setpoints."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"script is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, list):
        raise ParseError("script root must be a JSON array")
    points = []
    for i, row in enumerate(data):
        try:
            points.append(
                ScriptPoint(
                    t=float(row["t"]),
                    target_pitch=float(row.get("target_pitch_rad", 0.0)),
                    steer=float(row.get("steer_rad", 0.0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad script entry #{i}: {exc}") from exc
    if any(b.t <= a.t for a, b in zip(points, points[1:])):
        raise StructuralError("script setpoints must be strictly time-ordered")
    return points


class ScriptSource:
    """Step-function setpoints: the latest entry with t <= now applies."""

    def __init__(self, points: list[ScriptPoint], duration: float):
        for pt in points:
            if pt.t > duration:
                raise StructuralError(
                    f"script setpoint at t={pt.t} exceeds the simulation duration {duration}"
                )
        self.points = sorted(points, key=lambda p: p.t)

    def get(self, t: float) -> tuple[float, float]:
        target, steer = 0.0, 0.0
        for pt in self.points:
            if pt.t <= t:
                target, steer = pt.target_pitch, pt.steer
            else:
                break
        return target, steer


@dataclass
class SimResult:
    records: list
    truth: PoseTrack
    final_state: SphereState
    max_spin_rate: float     # max |phidot| over the run, rad/s
    path_length: float       # integrated |dx|, m


def _frame_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, 7919, index)).generate_state(1)[0])


def run_simulation(
    scene: Scene,
    cfg: SimConfig,
    duration: float,
    seed: int,
    source,
    lidar_enabled: bool = True,
) -> SimResult:
    """Fixed-step closed loop: dynamics + PID + sensors.

    source.get(t) supplies (target_pitch, steer) setpoints. Emits records
    sorted by time key (truth before imu before lidar on ties).
    """
    cfg.validate()
    dt = cfg.sim.dt
    n_steps = int(round(duration / dt))
    control_every = max(1, int(round(cfg.sim.control_dt / dt)))
    imu_every = max(1, int(round(1.0 / (cfg.imu.rate * dt))))
    truth_every = max(1, int(round(1.0 / (cfg.sim.truth_rate * dt))))
    frame_every = max(1, int(round(cfg.lidar.frame_period / dt)))

    imu_sim = ImuSimulator(cfg.imu, seed=int(np.random.SeedSequence((seed, 104729)).generate_state(1)[0]))
    pitch_rng = np.random.default_rng(np.random.SeedSequence((seed, 65537)))

    state = SphereState()
    pid = PidState()
    cmd = DriveCommand()
    records: list = []
    truth_times, truth_qs, truth_ps = [], [], []
    frame_times, frame_qs, frame_ps = [], [], []
    frame_start_step = 0
    max_spin = 0.0
    path_len = 0.0

    def sensor_pose(st: SphereState) -> Pose:
        return ground_pose(st, cfg.sphere, cfg.mount)

    def record_truth(st: SphereState) -> None:
        pose = sensor_pose(st)
        records.append(TruthRecord(t=st.t, pose=pose))
        truth_times.append(st.t)
        truth_qs.append(pose.q)
        truth_ps.append(pose.p)

    def push_frame_pose(st: SphereState) -> None:
        pose = sensor_pose(st)
        frame_times.append(st.t)
        frame_qs.append(pose.q)
        frame_ps.append(pose.p)

    record_truth(state)
    push_frame_pose(state)

    for k in range(n_steps):
        if k % control_every == 0:
            target, steer = source.get(state.t)
            measured = state.alpha
            if cfg.sim.pitch_source == "noisy" and cfg.sim.pitch_sigma > 0:
                measured += float(pitch_rng.normal(0.0, cfg.sim.pitch_sigma))
            cmd, pid = drive_controller(
                measured, target, pid, cfg.pid,
                control_every * dt, tau_max=cfg.sphere.tau_max, beta_cmd=steer,
            )
        if k % imu_every == 0:
            d = derivatives(state, cfg.sphere, cmd)
            records.append(_imu_record(imu_sim.sample(state, d, cfg.sphere, cfg.mount)))

        prev_x = state.x
        state = step_rk4(state, cfg.sphere, cmd, dt)
        path_len += abs(state.x - prev_x)
        max_spin = max(max_spin, abs(state.phidot))
        push_frame_pose(state)

        if (k + 1) % truth_every == 0:
            record_truth(state)
        if lidar_enabled and (k + 1) % frame_every == 0:
            t0 = frame_start_step * dt
            track = PoseTrack(np.array(frame_times), np.array(frame_qs), np.array(frame_ps))
            scan = lidar_frame(scene, track, cfg.lidar, t0, _frame_seed(seed, frame_start_step // frame_every))
            pts = np.concatenate(
                [scan.cloud.points, scan.cloud.time_offsets[:, None]], axis=1
            ) if len(scan.cloud) else np.empty((0, 4))
            records.append(LidarRecord(t_start=t0, points=pts))
            last_t, last_q, last_p = frame_times[-1], frame_qs[-1], frame_ps[-1]
            frame_times, frame_qs, frame_ps = [last_t], [last_q], [last_p]
            frame_start_step = k + 1

    order = {TruthRecord: 0, ImuRecord: 1, LidarRecord: 2}
    records.sort(key=lambda r: (r.key_time, order[type(r)]))
    truth = PoseTrack(np.array(truth_times), np.array(truth_qs), np.array(truth_ps))
    return SimResult(
        records=records,
        truth=truth,
        final_state=state,
        max_spin_rate=max_spin,
        path_length=path_len,
    )


def _imu_record(sample: ImuSample) -> ImuRecord:
    return ImuRecord(t=sample.t, gyro=sample.gyro, accel=sample.accel)


@dataclass
class ReplayResult:
    pipeline: LioPipeline
    trajectory: list  # Pose per processed scan
    reports: list


def replay_log(records, cfg: SimConfig, init_pose: Pose | None = None) -> ReplayResult:
    """Feed a recorded sensor stream through the LIO pipeline.

    Scans are processed once their IMU window is complete (i.e. when the
    next lidar record or the end of the stream arrives). The initial pose
    comes from the first truth record unless given explicitly.
    """
    if init_pose is None:
        for rec in records:
            if isinstance(rec, TruthRecord):
                init_pose = rec.pose
                break
        else:
            init_pose = Pose()

    pipe = LioPipeline(cfg.lio, init_pose=init_pose)
    trajectory: list[Pose] = []
    imu_buf: list[ImuSample] = []
    pending: LidarRecord | None = None
    pending_end: float | None = None
    n_scans = 0

    def flush(window_end: float) -> None:
        nonlocal pending, n_scans
        if pending is None:
            return
        scan = LidarScan(
            t_start=pending.t_start,
            cloud=PointCloud(points=pending.points[:, :3], time_offsets=pending.points[:, 3]),
        )
        batch = [m for m in imu_buf if pipe.state.pose.t < m.t <= window_end]
        pipe.process_scan(scan, batch)
        trajectory.append(pipe.state.pose)
        del imu_buf[: _count_until(imu_buf, window_end)]
        pending = None
        n_scans += 1

    for rec in records:
        if isinstance(rec, ImuRecord):
            imu_buf.append(ImuSample(t=rec.t, gyro=rec.gyro, accel=rec.accel))
        elif isinstance(rec, LidarRecord):
            if pending is not None:
                flush(rec.t_start)
            pending = rec
            off = rec.points[:, 3]
            pending_end = rec.t_start + (float(off.max()) if len(off) else 0.0)
    if pending is not None:
        end = max(pending_end or pending.t_start, imu_buf[-1].t if imu_buf else pending.t_start)
        flush(end)
    if n_scans == 0:
        raise StructuralError("log contains no lidar frames")
    return ReplayResult(pipeline=pipe, trajectory=trajectory, reports=pipe.reports)


def _count_until(buf: list[ImuSample], t: float) -> int:
    n = 0
    for m in buf:
        if m.t <= t:
            n += 1
        else:
            break
    return n
