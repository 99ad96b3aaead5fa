import math

import numpy as np
import pytest

from spheremap.dynamics import (
    DriveCommand,
    SphereParams,
    SphereState,
    derivatives,
    ground_pose,
    mechanical_energy,
    mirrored,
    step_rk4,
)
from spheremap.errors import ParameterError
from spheremap.geom import Pose, quat_angle, quat_from_axis_angle, quat_multiply, quat_conjugate


def lagrangian_oracle(p: SphereParams):
    """Independent symbolic derivation of the accelerations.

    Builds the Lagrangian of the rolling shell + pendulum from scratch with
    sympy and solves the Euler-Lagrange equations, so it shares no code with
    dynamics.derivatives.
    """
    import sympy as sp

    t = sp.Symbol("t")
    tau, c_a, c_r = sp.symbols("tau c_a c_r")
    phi = sp.Function("phi")(t)
    al = sp.Function("alpha")(t)
    x = p.R * phi
    xb = x - p.l * sp.sin(al)
    zb = p.R - p.l * sp.cos(al)
    T = (
        sp.Rational(1, 2) * (p.m1 + p.m2) * sp.diff(x, t) ** 2
        + sp.Rational(1, 2) * sp.Rational(2, 3) * p.m1 * p.R**2 * sp.diff(phi, t) ** 2
        + sp.Rational(1, 2) * p.m3 * (sp.diff(xb, t) ** 2 + sp.diff(zb, t) ** 2)
    )
    U = -p.m3 * p.g * p.l * sp.cos(al)
    L = T - U
    dphi, dal = sp.diff(phi, t), sp.diff(al, t)
    eq_phi = sp.Eq(sp.diff(sp.diff(L, dphi), t) - sp.diff(L, phi), -tau - c_r * dphi)
    eq_al = sp.Eq(sp.diff(sp.diff(L, dal), t) - sp.diff(L, al), tau - c_a * dal)
    sol = sp.solve([eq_phi, eq_al], [sp.diff(phi, t, 2), sp.diff(al, t, 2)], dict=True)[0]
    args = (al, dphi, dal, tau, c_a, c_r)
    f_phi = sp.lambdify(args, sol[sp.diff(phi, t, 2)], "numpy")
    f_al = sp.lambdify(args, sol[sp.diff(al, t, 2)], "numpy")
    return f_phi, f_al


class TestDerivatives:
    def test_equilibrium(self):
        s = SphereState()
        d = derivatives(s, SphereParams(), DriveCommand())
        assert all(
            getattr(d, f) == 0.0
            for f in ("xdot", "phidot", "alphadot", "xddot", "phiddot", "alphaddot", "psidot", "betadot")
        )

    def test_restoring_swing_reacts_toward_bob(self):
        # bob displaced toward the drive direction (alpha < 0 in this
        # convention): pendulum restores toward hanging while the shell
        # reacts toward the bob side.
        p = SphereParams(c_alpha=0.0, c_roll=0.0)
        s = SphereState(alpha=-math.radians(10))
        d = derivatives(s, p, DriveCommand())
        assert d.alphaddot > 0  # restoring toward alpha = 0
        assert d.phiddot > 0   # shell reacts forward, toward the bob

    def test_positive_torque_drives_forward_initially(self):
        p = SphereParams(c_alpha=0.0, c_roll=0.0)
        d = derivatives(SphereState(), p, DriveCommand(tau=0.01))
        assert d.xddot > 0

    def test_matches_symbolic_oracle(self):
        p = SphereParams()
        f_phi, f_al = lagrangian_oracle(p)
        rng = np.random.default_rng(11)
        for _ in range(50):
            s = SphereState(
                alpha=rng.uniform(-2.5, 2.5),
                phidot=rng.uniform(-10, 10),
                alphadot=rng.uniform(-10, 10),
            )
            tau = rng.uniform(-p.tau_max, p.tau_max)
            d = derivatives(s, p, DriveCommand(tau=tau))
            want_phi = f_phi(s.alpha, s.phidot, s.alphadot, tau, p.c_alpha, p.c_roll)
            want_al = f_al(s.alpha, s.phidot, s.alphadot, tau, p.c_alpha, p.c_roll)
            assert d.phiddot == pytest.approx(want_phi, rel=1e-10, abs=1e-12)
            assert d.alphaddot == pytest.approx(want_al, rel=1e-10, abs=1e-12)

    def test_torque_clamped(self):
        p = SphereParams(c_alpha=0.0, c_roll=0.0)
        d_big = derivatives(SphereState(), p, DriveCommand(tau=10 * p.tau_max))
        d_max = derivatives(SphereState(), p, DriveCommand(tau=p.tau_max))
        assert d_big.phiddot == d_max.phiddot


class TestStepRk4:
    def test_equilibrium_unchanged(self):
        s = SphereState()
        s2 = step_rk4(s, SphereParams(), DriveCommand(), 0.005)
        assert s2.t == pytest.approx(0.005)
        assert s2.phi == 0.0 and s2.alpha == 0.0 and s2.xdot == 0.0

    def test_dt_out_of_range(self):
        with pytest.raises(ParameterError):
            step_rk4(SphereState(), SphereParams(), DriveCommand(), 0.02)
        with pytest.raises(ParameterError):
            step_rk4(SphereState(), SphereParams(), DriveCommand(), 0.0)

    def test_energy_drift_vs_fine_step_oracle(self):
        # free swing, no damping: coarse-step energy drift stays tiny and the
        # trajectory agrees with a 10x finer integration
        p = SphereParams(c_alpha=0.0, c_roll=0.0)
        s = SphereState(alpha=math.radians(20))
        e0 = mechanical_energy(s, p)
        for _ in range(2000):
            s = step_rk4(s, p, DriveCommand(), 1e-3)
        fine = SphereState(alpha=math.radians(20))
        for _ in range(20000):
            fine = step_rk4(fine, p, DriveCommand(), 1e-4)
        assert abs(mechanical_energy(s, p) - e0) / abs(e0) < 1e-6
        assert s.alpha == pytest.approx(fine.alpha, abs=1e-8)
        assert s.phi == pytest.approx(fine.phi, abs=1e-8)

    def test_small_angle_period_matches_linearization(self):
        # linearized EOM: alpha'' = -(m3 g l / (m3 l^2 - B^2/A)) alpha
        p = SphereParams(c_alpha=0.0, c_roll=0.0)
        A = (p.m1 + p.m2 + p.m3) * p.R**2 + (2 / 3) * p.m1 * p.R**2
        B = p.m3 * p.R * p.l
        omega2 = p.m3 * p.g * p.l / (p.m3 * p.l**2 - B**2 / A)
        period_lin = 2 * math.pi / math.sqrt(omega2)

        s = SphereState(alpha=math.radians(1.0))
        dt = 1e-3
        crossings = []
        prev = s.alpha
        for i in range(int(5 * period_lin / dt)):
            s = step_rk4(s, p, DriveCommand(), dt)
            if prev < 0 <= s.alpha:
                # linear interpolation of the crossing time
                crossings.append(s.t - dt * s.alpha / (s.alpha - prev))
            prev = s.alpha
        assert len(crossings) >= 2
        period_sim = np.mean(np.diff(crossings))
        assert period_sim == pytest.approx(period_lin, rel=0.01)

    def test_dissipation_monotone(self):
        p = SphereParams(c_alpha=0.01, c_roll=0.005)
        s = SphereState(alpha=math.radians(30), phidot=2.0)
        e = mechanical_energy(s, p)
        for _ in range(3000):
            s = step_rk4(s, p, DriveCommand(), 1e-3)
            e2 = mechanical_energy(s, p)
            assert e2 <= e + 1e-12
            e = e2

    def test_determinism(self):
        p = SphereParams()
        runs = []
        for _ in range(2):
            s = SphereState(alpha=0.3)
            out = []
            for k in range(500):
                s = step_rk4(s, p, DriveCommand(tau=0.02 * math.sin(0.01 * k)), 1e-3)
                out.append((s.phi, s.alpha, s.psi))
            runs.append(out)
        assert runs[0] == runs[1]  # bit-identical

    def test_rolling_constraint_exact(self):
        p = SphereParams()
        s = SphereState(x=0.17, phi=1.7)
        c0 = s.x - p.R * s.phi
        for _ in range(1000):
            s = step_rk4(s, p, DriveCommand(tau=0.05), 1e-3)
        assert s.x - p.R * s.phi == pytest.approx(c0, abs=1e-15)

    def test_mirror_symmetry(self):
        p = SphereParams()
        a = SphereState(alpha=0.25)
        b = mirrored(a)
        for _ in range(2000):
            a = step_rk4(a, p, DriveCommand(tau=0.03), 1e-3)
            b = step_rk4(b, p, DriveCommand(tau=-0.03), 1e-3)
        assert a.x == pytest.approx(-b.x, abs=1e-9)
        assert a.alpha == pytest.approx(-b.alpha, abs=1e-9)

    def test_steering_curves_path(self):
        p = SphereParams()
        s = SphereState(phidot=2.0)
        for _ in range(4000):
            s = step_rk4(s, p, DriveCommand(tau=0.0, beta_cmd=0.3), 1e-3)
        assert abs(s.psi) > 0.01
        assert abs(s.wy) > 1e-4


class TestMechanicalEnergy:
    def test_rest_at_datum(self):
        p = SphereParams()
        assert mechanical_energy(SphereState(), p) == pytest.approx(-p.m3 * p.g * p.l)

    def test_rest_at_horizontal(self):
        p = SphereParams()
        assert mechanical_energy(SphereState(alpha=math.pi / 2), p) == pytest.approx(0.0, abs=1e-15)

    def test_pure_translation(self):
        p = SphereParams()
        v = 0.8
        s = SphereState(xdot=v, phidot=v / p.R)
        want = 0.5 * (p.m1 + p.m2 + p.m3) * v**2 + 0.5 * (2 / 3) * p.m1 * p.R**2 * (v / p.R) ** 2 - p.m3 * p.g * p.l
        assert mechanical_energy(s, p) == pytest.approx(want)


class TestGroundPose:
    def test_zero_state(self):
        p = SphereParams()
        gp = ground_pose(SphereState(), p)
        assert np.allclose(gp.p, [0, 0, p.R])
        assert quat_angle(gp.q) < 1e-12

    def test_half_roll(self):
        p = SphereParams()
        s = SphereState(x=math.pi * p.R, phi=math.pi, wx=math.pi * p.R)
        gp = ground_pose(s, p)
        assert np.allclose(gp.p, [math.pi * p.R, 0, p.R], atol=1e-12)
        rel = quat_multiply(quat_conjugate(gp.q), quat_from_axis_angle([0, 1, 0], math.pi))
        assert quat_angle(rel) < 1e-9

    def test_heading_rotation(self):
        # after turning to psi=90 deg, straight rolling moves +y (planar
        # kinematics oracle: integrate heading unicycle)
        p = SphereParams()
        s = SphereState(psi=math.pi / 2, phidot=1.0)
        d = 0.0
        dt = 1e-3
        for _ in range(2000):
            s = step_rk4(s, p, DriveCommand(), dt)
        # unicycle oracle: dy = integral of xdot*sin(psi) = x * 1
        gp = ground_pose(s, p)
        assert gp.p[0] == pytest.approx(0.0, abs=1e-9)
        assert gp.p[1] == pytest.approx(s.x, abs=1e-6)

    def test_mount_offset(self):
        p = SphereParams()
        mount = Pose(p=[0, 0, 0.03])
        gp = ground_pose(SphereState(), p, mount)
        assert np.allclose(gp.p, [0, 0, p.R + 0.03])
        # after rolling half a turn the mount hangs below the center
        s = SphereState(phi=math.pi)
        gp2 = ground_pose(s, p, mount)
        assert np.allclose(gp2.p, [0, 0, p.R - 0.03], atol=1e-12)


class TestParams:
    def test_validation(self):
        with pytest.raises(ParameterError):
            SphereParams(l=0.2).validate()  # l >= R
        with pytest.raises(ParameterError):
            SphereParams(m1=0).validate()
        SphereParams().validate()
