"""Planar dynamics of the pendulum-driven sphere plus kinematic steering.

Model: a thin spherical shell (mass m1) rolling without slip along its
heading, an inner driver mass m2 translating with the shell center, and a
counter-weight m3 on a rod of length l pivoted at the shell center.
Generalized coordinates are the shell spin angle phi and the pendulum
swing angle alpha, both measured about the lateral (+y) axis, so positive
alpha displaces the bob *against* the drive direction. The motor torque
tau acts between pendulum and shell: +tau on alpha, -tau on phi. Rolling
ties translation to spin, x = R * phi.

Lateral control is kinematic: shifting the internal mass by beta curves
the path at rate psi_dot = k_steer * sin(beta) * x_dot. The world-frame
position (wx, wy) integrates the heading and is carried in the state
because x alone is only arc length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .geom import Pose, pose_compose, quat_from_axis_angle, quat_multiply


@dataclass
class SphereParams:
    """Physical constants; defaults are plausible for a <1 kg, 20 cm shell."""

    R: float = 0.10          # shell radius, m
    m1: float = 0.40         # shell mass, kg
    m2: float = 0.45         # inner driver mass, kg
    m3: float = 0.15         # counter-weight mass, kg
    l: float = 0.06          # rod length, m
    g: float = 9.81          # gravity, m/s^2
    c_alpha: float = 0.02    # pendulum viscous damping, N*m*s
    c_roll: float = 0.01     # rolling resistance, N*m*s
    k_steer: float = 5.0     # heading gain, 1/m
    tau_max: float = 0.25    # torque clamp, N*m
    beta_max: float = 0.5    # lateral mass-shift clamp, rad
    beta_tau: float = 0.15   # first-order lag of the lateral shift, s

    def validate(self) -> None:
        for name in ("R", "m1", "m2", "m3", "l", "g"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be strictly positive")
        if self.l >= self.R:
            raise ParameterError("rod length l must be smaller than shell radius R")
        for name in ("c_alpha", "c_roll"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        if self.tau_max <= 0 or self.beta_max <= 0 or self.beta_tau <= 0:
            raise ParameterError("tau_max, beta_max and beta_tau must be positive")

    @property
    def shell_inertia(self) -> float:
        return (2.0 / 3.0) * self.m1 * self.R**2


@dataclass
class SphereState:
    """Generalized coordinates and rates at time t.

    x is arc length along the path and satisfies x = R*phi + const by
    construction; (wx, wy) is the integrated world position of the shell
    center (equal to (x, 0) while psi stays 0).
    """

    x: float = 0.0
    phi: float = 0.0
    alpha: float = 0.0
    xdot: float = 0.0
    phidot: float = 0.0
    alphadot: float = 0.0
    psi: float = 0.0
    beta: float = 0.0
    wx: float = 0.0
    wy: float = 0.0
    t: float = 0.0


@dataclass
class DriveCommand:
    tau: float = 0.0       # motor torque, N*m
    beta_cmd: float = 0.0  # commanded lateral mass angle, rad


@dataclass
class SphereDeriv:
    xdot: float
    phidot: float
    alphadot: float
    xddot: float
    phiddot: float
    alphaddot: float
    psidot: float
    betadot: float


def derivatives(s: SphereState, p: SphereParams, u: DriveCommand) -> SphereDeriv:
    """Euler-Lagrange accelerations for (phi, alpha) plus the kinematic rates."""
    tau = min(max(u.tau, -p.tau_max), p.tau_max)
    beta_cmd = min(max(u.beta_cmd, -p.beta_max), p.beta_max)

    A = (p.m1 + p.m2 + p.m3) * p.R**2 + p.shell_inertia
    B = p.m3 * p.R * p.l
    ml2 = p.m3 * p.l**2
    ca, sa = math.cos(s.alpha), math.sin(s.alpha)

    rhs_phi = -tau - p.c_roll * s.phidot - B * sa * s.alphadot**2
    rhs_alpha = tau - p.c_alpha * s.alphadot - p.m3 * p.g * p.l * sa
    det = A * ml2 - (B * ca) ** 2
    phidd = (ml2 * rhs_phi + B * ca * rhs_alpha) / det
    alphadd = (B * ca * rhs_phi + A * rhs_alpha) / det

    xdot = p.R * s.phidot
    return SphereDeriv(
        xdot=xdot,
        phidot=s.phidot,
        alphadot=s.alphadot,
        xddot=p.R * phidd,
        phiddot=phidd,
        alphaddot=alphadd,
        psidot=p.k_steer * math.sin(s.beta) * xdot,
        betadot=(beta_cmd - s.beta) / p.beta_tau,
    )


def _pack(s: SphereState) -> np.ndarray:
    return np.array([s.phi, s.alpha, s.phidot, s.alphadot, s.psi, s.beta, s.wx, s.wy])


def _rates(y: np.ndarray, p: SphereParams, u: DriveCommand) -> np.ndarray:
    s = SphereState(phi=y[0], alpha=y[1], phidot=y[2], alphadot=y[3],
                    psi=y[4], beta=y[5], wx=y[6], wy=y[7])
    d = derivatives(s, p, u)
    vx = d.xdot * math.cos(s.psi)
    vy = d.xdot * math.sin(s.psi)
    return np.array([d.phidot, d.alphadot, d.phiddot, d.alphaddot, d.psidot, d.betadot, vx, vy])


def step_rk4(s: SphereState, p: SphereParams, u: DriveCommand, dt: float) -> SphereState:
    """Classical fixed-step RK4; deterministic; dt must be in (0, 0.01]."""
    if not 0.0 < dt <= 0.01:
        raise ParameterError(f"dt must be in (0, 0.01], got {dt}")
    y0 = _pack(s)
    k1 = _rates(y0, p, u)
    k2 = _rates(y0 + 0.5 * dt * k1, p, u)
    k3 = _rates(y0 + 0.5 * dt * k2, p, u)
    k4 = _rates(y0 + dt * k3, p, u)
    y = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    phi = float(y[0])
    return SphereState(
        x=s.x + p.R * (phi - s.phi),  # rolling constraint holds exactly
        phi=phi,
        alpha=float(y[1]),
        xdot=p.R * float(y[2]),
        phidot=float(y[2]),
        alphadot=float(y[3]),
        psi=float(y[4]),
        beta=float(y[5]),
        wx=float(y[6]),
        wy=float(y[7]),
        t=s.t + dt,
    )


def mechanical_energy(s: SphereState, p: SphereParams) -> float:
    """Kinetic plus potential energy; potential datum at the shell center."""
    xdot = p.R * s.phidot
    ke_shell = 0.5 * (p.m1 + p.m2) * xdot**2 + 0.5 * p.shell_inertia * s.phidot**2
    # bob velocity: (xdot - l*alphadot*cos(alpha), l*alphadot*sin(alpha))
    ke_bob = 0.5 * p.m3 * (
        xdot**2 - 2.0 * p.l * xdot * s.alphadot * math.cos(s.alpha) + (p.l * s.alphadot) ** 2
    )
    pot = -p.m3 * p.g * p.l * math.cos(s.alpha)
    return ke_shell + ke_bob + pot


def ground_pose(s: SphereState, p: SphereParams, mount: Pose | None = None) -> Pose:
    """World pose of the sensor mounted on the rolling shell.

    Shell center sits at height R over the ground plane; orientation is
    yaw(psi) composed with the roll angle phi about the lateral axis.
    mount is the sensor pose in the shell frame (identity if omitted).
    """
    q_shell = quat_multiply(
        quat_from_axis_angle([0.0, 0.0, 1.0], s.psi),
        quat_from_axis_angle([0.0, 1.0, 0.0], s.phi),
    )
    shell = Pose(t=s.t, q=q_shell, p=np.array([s.wx, s.wy, p.R]))
    if mount is None:
        return shell
    return pose_compose(shell, mount)


def mirrored(s: SphereState) -> SphereState:
    """State with the longitudinal direction flipped (alpha, phi, x negated)."""
    return replace(
        s,
        x=-s.x, phi=-s.phi, alpha=-s.alpha,
        xdot=-s.xdot, phidot=-s.phidot, alphadot=-s.alphadot,
        wx=-s.wx,
    )
