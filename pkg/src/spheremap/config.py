"""Single JSON configuration document covering every subsystem.

Every section is optional; omitted fields keep their defaults. Unknown
keys are rejected so typos fail loudly. The schema with a full example
lives in docs/formats.md.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .control import PidGains, TeleopConfig
from .dynamics import SphereParams
from .errors import ParameterError, ParseError
from .geom import Pose
from .lio import LioConfig, RegistrationParams
from .sensors import ImuModel, LidarModel


@dataclass
class SimTiming:
    dt: float = 1e-3           # dynamics step, s
    control_dt: float = 0.01   # PID update period, s
    truth_rate: float = 20.0   # truth record rate, Hz
    pitch_source: str = "truth"  # "truth" | "noisy"
    pitch_sigma: float = 0.0     # rad, for pitch_source = "noisy"

    def validate(self) -> None:
        if not 0 < self.dt <= 0.01:
            raise ParameterError("sim.dt must be in (0, 0.01]")
        if self.control_dt < self.dt:
            raise ParameterError("sim.control_dt must be >= sim.dt")
        if self.truth_rate <= 0:
            raise ParameterError("sim.truth_rate must be positive")
        if self.pitch_source not in ("truth", "noisy"):
            raise ParameterError("sim.pitch_source must be 'truth' or 'noisy'")


@dataclass
class EvalOptions:
    max_dist: float = 0.5   # m
    bin_width: float = 0.01  # m


@dataclass
class SimConfig:
    sphere: SphereParams = field(default_factory=SphereParams)
    mount: Pose = field(default_factory=lambda: Pose(p=[0.0, 0.0, 0.03]))
    lidar: LidarModel = field(default_factory=LidarModel)
    imu: ImuModel = field(default_factory=ImuModel)
    pid: PidGains = field(default_factory=PidGains)
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    lio: LioConfig = field(default_factory=LioConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    sim: SimTiming = field(default_factory=SimTiming)

    def validate(self) -> None:
        self.sphere.validate()
        self.lidar.validate()
        self.imu.validate()
        self.pid.validate()
        self.sim.validate()


def _update_dataclass(obj, data: dict, path: str):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ParameterError(f"unknown config key {path}.{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _update_dataclass(current, value, f"{path}.{key}")
        elif isinstance(current, np.ndarray):
            setattr(obj, key, np.asarray(value, dtype=float))
        else:
            setattr(obj, key, value)
    return obj


def config_from_dict(data: dict) -> SimConfig:
    cfg = SimConfig()
    sections = {f.name for f in dataclasses.fields(SimConfig)}
    for key, value in data.items():
        if key not in sections:
            raise ParameterError(f"unknown config section {key!r}")
        if key == "mount":
            cfg.mount = Pose(q=value.get("q", [1, 0, 0, 0]), p=value.get("p", [0, 0, 0]))
        else:
            _update_dataclass(getattr(cfg, key), value, key)
    cfg.validate()
    return cfg


def config_to_dict(cfg: SimConfig) -> dict:
    def encode(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, Pose):
            return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, Pose):
            return {"p": obj.p.tolist(), "q": obj.q.tolist()}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return obj

    return encode(cfg)


def load_config(path=None) -> SimConfig:
    """Config file (or defaults when path is None), validated."""
    if path is None:
        cfg = SimConfig()
        cfg.validate()
        return cfg
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError("config root must be a JSON object")
    return config_from_dict(data)


def save_config(cfg: SimConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
        f.write("\n")
