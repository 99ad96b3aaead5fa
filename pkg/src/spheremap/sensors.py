"""Simulated solid-state LiDAR and strapdown IMU riding on the shell.

Per-beam emission times inside a frame are what produce motion distortion
when the shell spins quickly: each beam is cast from the pose at its own
timestamp but stored in the frame-start sensor frame.

Gravity convention: g_vec = (0, 0, -g) in the world; the accelerometer
reports specific force (acceleration minus gravity, expressed in the
sensor frame).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .dynamics import SphereDeriv, SphereParams, SphereState, ground_pose
from .errors import InputError, ParameterError
from .geom import Pose, PointCloud, quat_rotate, quat_to_matrix
from .world import Scene, raycast_batch

GRAVITY = 9.81


@dataclass
class LidarModel:
    """360-degree solid-state scanner; defaults follow the public datasheet
    of a Livox Mid-360-class device and are freely configurable."""

    azimuth_fov_deg: float = 360.0
    elevation_min_deg: float = -7.0
    elevation_max_deg: float = 52.0
    rate: float = 200000.0       # points per second
    frame_period: float = 0.1    # s
    range_sigma: float = 0.01    # m
    max_range: float = 40.0      # m
    min_range: float = 0.1       # m
    pattern_seed: int = 0

    def validate(self) -> None:
        if not self.min_range < self.max_range:
            raise ParameterError("min_range must be below max_range")
        if self.rate * self.frame_period < 1:
            raise ParameterError("rate * frame_period must be at least one beam")
        if self.elevation_min_deg >= self.elevation_max_deg:
            raise ParameterError("elevation FOV is empty")


@dataclass
class ImuModel:
    rate: float = 200.0                 # Hz
    gyro_noise: float = 1e-3            # rad/s/sqrt(Hz)
    accel_noise: float = 1e-2           # m/s^2/sqrt(Hz)
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))    # rad/s
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))   # m/s^2
    gyro_bias_rw: float = 0.0           # rad/s/sqrt(s)
    accel_bias_rw: float = 0.0          # m/s^2/sqrt(s)

    def __post_init__(self):
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float).reshape(3)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float).reshape(3)

    def validate(self) -> None:
        if self.rate <= 0:
            raise ParameterError("IMU rate must be positive")
        for name in ("gyro_noise", "accel_noise", "gyro_bias_rw", "accel_bias_rw"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")


@dataclass
class LidarScan:
    """One frame: points in the sensor frame at emission time, offsets in
    [0, frame_period) sorted non-decreasing."""

    t_start: float
    cloud: PointCloud

    def __post_init__(self):
        off = self.cloud.time_offsets
        if off is None:
            raise InputError("lidar scan requires per-point time offsets")
        if len(off) and np.any(np.diff(off) < 0):
            raise InputError("scan time offsets must be sorted")


@dataclass
class ImuSample:
    t: float
    gyro: np.ndarray   # rad/s, body frame
    accel: np.ndarray  # m/s^2, specific force, body frame

    def __post_init__(self):
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.gyro)) and np.all(np.isfinite(self.accel))):
            raise InputError("IMU sample contains non-finite values")


@dataclass
class LidarFrameDebug:
    """Per-beam internals kept for tests and diagnostics."""

    times: np.ndarray        # absolute emission times of kept beams
    dirs_sensor: np.ndarray  # unit directions in the sensor frame
    true_ranges: np.ndarray  # noise-free ranges
    triangle_ids: np.ndarray


def beam_directions(model: LidarModel, n: int, seed: int) -> np.ndarray:
    """Low-discrepancy (azimuth, elevation) pattern inside the FOV."""
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    u = sampler.random(n)
    az = np.radians(model.azimuth_fov_deg) * u[:, 0]
    el = np.radians(model.elevation_min_deg) + np.radians(
        model.elevation_max_deg - model.elevation_min_deg
    ) * u[:, 1]
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


def lidar_frame(
    scene: Scene,
    pose_track,
    model: LidarModel,
    t_start: float,
    seed: int,
    return_debug: bool = False,
):
    """Simulate one frame; pose_track.sample(times) supplies the sensor pose
    over [t_start, t_start + frame_period]."""
    model.validate()
    n = int(round(model.rate * model.frame_period))
    offsets = np.arange(n) / model.rate
    times = t_start + offsets
    dirs_s = beam_directions(model, n, seed)
    quats, origins = pose_track.sample(times)
    dirs_w = quat_rotate(quats, dirs_s)
    true_r, tri = raycast_batch(scene, origins, dirs_w, model.max_range)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, model.range_sigma, n) if model.range_sigma > 0 else np.zeros(n)
    meas = true_r + noise
    keep = (tri >= 0) & (meas >= model.min_range) & (meas <= model.max_range)
    cloud = PointCloud(
        points=dirs_s[keep] * meas[keep, None],
        time_offsets=offsets[keep],
    )
    scan = LidarScan(t_start=t_start, cloud=cloud)
    if return_debug:
        return scan, LidarFrameDebug(
            times=times[keep],
            dirs_sensor=dirs_s[keep],
            true_ranges=true_r[keep],
            triangle_ids=tri[keep],
        )
    return scan


def sensor_kinematics(
    s: SphereState, d: SphereDeriv, p: SphereParams, mount: Pose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """True (gyro_body, specific_force_body, R_world_sensor) of the mounted sensor.

    Closed-form rigid-body kinematics of a point offset from the shell
    center; validated in tests against finite differences of ground_pose.
    """
    cp, sp_ = math.cos(s.psi), math.sin(s.psi)
    y_head = np.array([-sp_, cp, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    omega_w = d.psidot * z + s.phidot * y_head
    psiddot = p.k_steer * (math.sin(s.beta) * d.xddot + math.cos(s.beta) * d.betadot * d.xdot)
    omegadot_w = psiddot * z + d.phiddot * y_head + s.phidot * d.psidot * np.cross(z, y_head)

    shell_pose = ground_pose(s, p)
    R_shell = quat_to_matrix(shell_pose.q)
    r_w = R_shell @ mount.p
    a_center = np.array(
        [d.xddot * cp - d.xdot * d.psidot * sp_, d.xddot * sp_ + d.xdot * d.psidot * cp, 0.0]
    )
    a_sensor = a_center + np.cross(omegadot_w, r_w) + np.cross(omega_w, np.cross(omega_w, r_w))

    R_sensor = R_shell @ quat_to_matrix(mount.q)
    g_vec = np.array([0.0, 0.0, -p.g])
    gyro_b = R_sensor.T @ omega_w
    accel_b = R_sensor.T @ (a_sensor - g_vec)
    return gyro_b, accel_b, R_sensor


class ImuSimulator:
    """Stateful IMU: additive white noise plus random-walk biases."""

    def __init__(self, model: ImuModel, seed: int):
        model.validate()
        self.model = model
        self.rng = np.random.default_rng(seed)
        self.bias_g = model.gyro_bias.copy()
        self.bias_a = model.accel_bias.copy()
        self._last_t: float | None = None

    def sample(self, s: SphereState, d: SphereDeriv, p: SphereParams, mount: Pose) -> ImuSample:
        m = self.model
        if self._last_t is not None:
            dt = s.t - self._last_t
            if dt > 0:
                sq = math.sqrt(dt)
                if m.gyro_bias_rw > 0:
                    self.bias_g = self.bias_g + m.gyro_bias_rw * sq * self.rng.standard_normal(3)
                if m.accel_bias_rw > 0:
                    self.bias_a = self.bias_a + m.accel_bias_rw * sq * self.rng.standard_normal(3)
        self._last_t = s.t
        gyro, accel, _ = sensor_kinematics(s, d, p, mount)
        sigma_g = m.gyro_noise * math.sqrt(m.rate)
        sigma_a = m.accel_noise * math.sqrt(m.rate)
        if sigma_g > 0:
            gyro = gyro + self.rng.normal(0.0, sigma_g, 3)
        if sigma_a > 0:
            accel = accel + self.rng.normal(0.0, sigma_a, 3)
        return ImuSample(t=s.t, gyro=gyro + self.bias_g, accel=accel + self.bias_a)
