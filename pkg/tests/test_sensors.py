import math

import numpy as np
import pytest

from spheremap.dynamics import DriveCommand, SphereParams, SphereState, derivatives, ground_pose, step_rk4
from spheremap.geom import Pose, PoseTrack, quat_from_axis_angle, quat_multiply, quat_conjugate, quat_to_rotvec, quat_from_rotvec, quat_rotate
from spheremap.sensors import (
    ImuModel,
    ImuSimulator,
    LidarModel,
    lidar_frame,
    sensor_kinematics,
)
from spheremap.world import make_corridor, raycast_batch


class StaticTrack:
    def __init__(self, pose):
        self.pose = pose

    def sample(self, times):
        n = len(times)
        return np.tile(self.pose.q, (n, 1)), np.tile(self.pose.p, (n, 1))


class SpinTrack:
    """Rotation about +z at a constant rate, fixed position."""

    def __init__(self, rate, p):
        self.rate = rate
        self.p = np.asarray(p, dtype=float)

    def sample(self, times):
        times = np.asarray(times, dtype=float)
        qs = np.stack([quat_from_axis_angle([0, 0, 1], self.rate * t) for t in times])
        return qs, np.tile(self.p, (len(times), 1))


def small_model(**kw):
    args = dict(rate=20000.0, frame_period=0.1, range_sigma=0.0, max_range=20.0, min_range=0.05)
    args.update(kw)
    return LidarModel(**args)


class TestLidarFrame:
    def setup_method(self):
        self.scene = make_corridor(8, 8, 4)
        self.pose = Pose(p=[0, 0, 2])

    def test_static_zero_noise_matches_raycast_oracle(self):
        scan, dbg = lidar_frame(self.scene, StaticTrack(self.pose), small_model(), 0.0, seed=5, return_debug=True)
        ranges = np.linalg.norm(scan.cloud.points, axis=1)
        dirs_w = dbg.dirs_sensor  # identity orientation
        t, tid = raycast_batch(self.scene, np.tile(self.pose.p, (len(dirs_w), 1)), dirs_w, 20.0)
        assert np.allclose(ranges, t, atol=1e-12)
        assert np.array_equal(tid, dbg.triangle_ids)

    def test_noise_statistics(self):
        model = small_model(range_sigma=0.01, rate=120000.0)
        scan, dbg = lidar_frame(self.scene, StaticTrack(self.pose), model, 0.0, seed=6, return_debug=True)
        assert len(scan.cloud) >= 1e4
        err = np.linalg.norm(scan.cloud.points, axis=1) - dbg.true_ranges
        assert abs(err.std() - 0.01) < 0.001

    def test_offsets_sorted_and_bounded(self):
        model = small_model()
        scan = lidar_frame(self.scene, StaticTrack(self.pose), model, 0.0, seed=7)
        off = scan.cloud.time_offsets
        assert np.all(np.diff(off) >= 0)
        assert off[0] >= 0 and off[-1] < model.frame_period
        assert len(scan.cloud) <= model.rate * model.frame_period

    def test_determinism(self):
        a = lidar_frame(self.scene, StaticTrack(self.pose), small_model(range_sigma=0.01), 0.0, seed=8)
        b = lidar_frame(self.scene, StaticTrack(self.pose), small_model(range_sigma=0.01), 0.0, seed=8)
        assert np.array_equal(a.cloud.points, b.cloud.points)

    def test_motion_distortion_exists(self):
        # spinning at 2 pi rad/s: reprojection with true per-point poses
        # recovers the walls, single-pose projection does not
        sigma = 0.01
        model = small_model(range_sigma=sigma)
        track = SpinTrack(2 * math.pi, [0, 0, 2])
        scan, dbg = lidar_frame(self.scene, track, model, 0.0, seed=9, return_debug=True)

        tris = self.scene.triangles[dbg.triangle_ids]
        n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)

        def plane_rms(points_world):
            d = np.einsum("ij,ij->i", points_world - tris[:, 0], n)
            return math.sqrt(float(np.mean(d**2)))

        qs, ps = track.sample(dbg.times)
        true_world = quat_rotate(qs, scan.cloud.points) + ps
        q0, p0 = track.sample(np.array([scan.t_start]))
        naive_world = quat_rotate(q0[0], scan.cloud.points) + p0[0]
        assert plane_rms(true_world) < 2 * sigma
        assert plane_rms(naive_world) > 5 * sigma


class TestSensorKinematics:
    def finite_difference_oracle(self, s, p, mount, h=1e-5):
        """omega and accel from numerically differentiated ground_pose."""
        cmd = DriveCommand()

        def state_at(dt):
            cur = s
            steps = int(round(abs(dt) / 1e-6))
            for _ in range(steps):
                cur = step_rk4(cur, p, cmd, 1e-6 if dt > 0 else 1e-6)
            return cur

        # use RK4 micro-steps both directions is awkward; instead sample
        # poses at t, t+h, t+2h along the integrated trajectory
        poses = []
        cur = s
        for k in range(3):
            poses.append(ground_pose(cur, p, mount))
            for _ in range(int(h / 1e-6)):
                cur = step_rk4(cur, p, cmd, 1e-6)
        # angular velocity at t+h/2 and t+3h/2 via quaternion log
        w1 = quat_to_rotvec(quat_multiply(quat_conjugate(poses[0].q), poses[1].q)) / h
        w2 = quat_to_rotvec(quat_multiply(quat_conjugate(poses[1].q), poses[2].q)) / h
        omega_body_mid = 0.5 * (w1 + w2)  # body-frame angular velocity at t+h
        v1 = (poses[1].p - poses[0].p) / h
        v2 = (poses[2].p - poses[1].p) / h
        a_world_mid = (v2 - v1) / h  # at t+h
        return poses[1], omega_body_mid, a_world_mid

    def test_static(self):
        p = SphereParams()
        s = SphereState()
        d = derivatives(s, p, DriveCommand())
        gyro, accel, _ = sensor_kinematics(s, d, p, Pose(p=[0, 0, 0.03]))
        assert np.allclose(gyro, 0)
        assert np.linalg.norm(accel) == pytest.approx(9.81)
        assert np.allclose(accel, [0, 0, 9.81])

    def test_straight_roll_gyro(self):
        p = SphereParams()
        s = SphereState(phidot=3.0, xdot=3.0 * p.R)
        d = derivatives(s, p, DriveCommand())
        gyro, _, _ = sensor_kinematics(s, d, p, Pose())
        assert gyro[1] == pytest.approx(3.0)
        assert abs(gyro[0]) < 1e-12 and abs(gyro[2]) < 1e-12

    def test_matches_finite_difference_oracle(self):
        p = SphereParams()
        mount = Pose(p=[0.01, -0.02, 0.03])
        s = SphereState(alpha=0.4, phidot=2.0, alphadot=-1.0, psi=0.3, beta=0.2, phi=0.7)
        s.xdot = p.R * s.phidot
        h = 1e-5
        pose_mid, omega_body_fd, a_world_fd = self.finite_difference_oracle(s, p, mount, h)

        # advance the analytic state to t+h to compare at the same instant
        cur = s
        for _ in range(int(h / 1e-6)):
            cur = step_rk4(cur, p, DriveCommand(), 1e-6)
        d = derivatives(cur, p, DriveCommand())
        gyro, accel, R_ws = sensor_kinematics(cur, d, p, mount)
        assert np.allclose(gyro, omega_body_fd, atol=1e-4)
        accel_fd = R_ws.T @ (a_world_fd - np.array([0, 0, -p.g]))
        assert np.allclose(accel, accel_fd, atol=1e-3)


class TestImuSimulator:
    def test_static_no_noise(self):
        sim = ImuSimulator(ImuModel(gyro_noise=0, accel_noise=0), seed=0)
        p = SphereParams()
        s = SphereState()
        d = derivatives(s, p, DriveCommand())
        m = sim.sample(s, d, p, Pose())
        assert np.allclose(m.gyro, 0)
        assert np.linalg.norm(m.accel) == pytest.approx(9.81)

    def test_bias_recovered_by_averaging(self):
        bias = np.array([0.01, -0.02, 0.005])
        sim = ImuSimulator(ImuModel(gyro_noise=1e-3, accel_noise=0, gyro_bias=bias), seed=1)
        p = SphereParams()
        s = SphereState()
        d = derivatives(s, p, DriveCommand())
        out = []
        for k in range(20000):
            s2 = SphereState(t=k * 0.005)
            out.append(sim.sample(s2, d, p, Pose()).gyro)
        mean = np.mean(out, axis=0)
        assert np.allclose(mean, bias, atol=5e-4)

    def test_gyro_integration_recovers_orientation(self):
        # noise-free gyro integrated over 1 s matches the true orientation
        # change within integration tolerance
        p = SphereParams()
        mount = Pose(p=[0, 0, 0.03])
        sim = ImuSimulator(ImuModel(gyro_noise=0, accel_noise=0), seed=2)
        s = SphereState(alpha=0.3, phidot=1.5)
        s.xdot = p.R * s.phidot
        dt_dyn = 1e-3
        imu_every = 1  # 1 kHz
        q_est = ground_pose(s, p, mount).q
        prev_gyro = None
        for k in range(1000):
            d = derivatives(s, p, DriveCommand())
            gyro, _, _ = sensor_kinematics(s, d, p, mount)
            if prev_gyro is not None:
                q_est = quat_multiply(q_est, quat_from_rotvec(0.5 * (prev_gyro + gyro) * dt_dyn))
            prev_gyro = gyro
            s = step_rk4(s, p, DriveCommand(), dt_dyn)
        # final midpoint step to land exactly on s.t
        d = derivatives(s, p, DriveCommand())
        gyro, _, _ = sensor_kinematics(s, d, p, mount)
        q_est = quat_multiply(q_est, quat_from_rotvec(0.5 * (prev_gyro + gyro) * dt_dyn))
        q_true = ground_pose(s, p, mount).q
        err = quat_to_rotvec(quat_multiply(quat_conjugate(q_est), q_true))
        assert np.linalg.norm(err) < 1e-6

    def test_determinism(self):
        p = SphereParams()
        s = SphereState()
        d = derivatives(s, p, DriveCommand())
        outs = []
        for _ in range(2):
            sim = ImuSimulator(ImuModel(gyro_bias_rw=1e-4), seed=3)
            seq = []
            for k in range(100):
                seq.append(sim.sample(SphereState(t=k * 0.005), d, p, Pose()).gyro.tolist())
            outs.append(seq)
        assert outs[0] == outs[1]
