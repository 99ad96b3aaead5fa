"""Discrete PID pitch regulation and joystick-to-command mapping.

The drive loop regulates the pendulum swing angle (the "pitch" an IMU on
the swinging assembly would measure) toward a joystick-selected target;
the second axis shifts the internal mass laterally. Gains are simulation
defaults, not published values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dynamics import DriveCommand
from .errors import ParameterError


@dataclass
class PidGains:
    kp: float = 0.8
    ki: float = 0.2
    kd: float = 0.05
    i_min: float = -0.5
    i_max: float = 0.5
    out_min: float = -0.25
    out_max: float = 0.25

    def validate(self) -> None:
        if not self.out_min < self.out_max:
            raise ParameterError("out_min must be below out_max")
        if not self.i_min <= 0.0 <= self.i_max:
            raise ParameterError("integral clamp must bracket zero")


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0
    initialized: bool = False


def pid_step(st: PidState, g: PidGains, error: float, dt: float) -> tuple[float, PidState]:
    """One controller update; returns (output, new state).

    The derivative term is suppressed on the first call; the integral is
    clamped to [i_min, i_max] (anti-windup), the output to [out_min, out_max].
    """
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    integral = min(max(st.integral + error * dt, g.i_min), g.i_max)
    deriv = (error - st.prev_error) / dt if st.initialized else 0.0
    out = g.kp * error + g.ki * integral + g.kd * deriv
    out = min(max(out, g.out_min), g.out_max)
    return out, PidState(integral=integral, prev_error=error, initialized=True)


@dataclass
class TeleopConfig:
    pitch_max: float = math.radians(30.0)  # rad
    beta_max: float = 0.5                  # rad
    deadband: float = 0.1                  # axis units


def teleop_map(axis_drive: float, axis_steer: float, cfg: TeleopConfig) -> tuple[float, float]:
    """Scale joystick axes to (target_pitch, beta_cmd); axes clamped to [-1, 1]."""
    def shape(axis: float, scale: float) -> float:
        axis = min(max(axis, -1.0), 1.0)
        if abs(axis) < cfg.deadband:
            return 0.0
        return axis * scale

    return shape(axis_drive, cfg.pitch_max), shape(axis_steer, cfg.beta_max)


def drive_controller(
    measured_pitch: float,
    target_pitch: float,
    st: PidState,
    g: PidGains,
    dt: float,
    tau_max: float,
    beta_cmd: float = 0.0,
) -> tuple[DriveCommand, PidState]:
    """PID on the pitch error, clamped to the motor's torque limit."""
    out, st2 = pid_step(st, g, target_pitch - measured_pitch, dt)
    tau = min(max(out, -tau_max), tau_max)
    return DriveCommand(tau=tau, beta_cmd=beta_cmd), st2
