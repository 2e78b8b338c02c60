"""Scenario description: trajectory, sensor rates, noise and anomaly schedule."""
from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field, fields, replace

from ..errors import BadScenario
from .trajectory import DEFAULTS, PRIMITIVES


class AnomalyType(enum.Enum):
    WHEEL_SLIP = "WheelSlip"
    CARPET_PULL = "CarpetPull"
    SUSPENSION = "Suspension"
    FEATURE_DROPOUT = "FeatureDropout"
    FEATURE_NOISE_BURST = "FeatureNoiseBurst"
    DYNAMIC_FEATURES = "DynamicFeatures"
    GNSS_OUTAGE = "GnssOutage"
    GNSS_DEGRADE = "GnssDegrade"
    LOW_SPEED_SEGMENT = "LowSpeedSegment"


WHEEL_ANOMALIES = (AnomalyType.WHEEL_SLIP, AnomalyType.CARPET_PULL, AnomalyType.SUSPENSION)


@dataclass(frozen=True)
class AnomalyEvent:
    """One scheduled corruption on ``[t_start, t_end)``.

    ``magnitude`` meaning per type: WheelSlip extra forward speed (m/s),
    Suspension reported forward speed (m/s), DynamicFeatures landmark speed
    (m/s), GnssDegrade satellites kept, LowSpeedSegment clock-rate scale.
    ``sigma_scale`` inflates GNSS sigmas for GnssDegrade.
    """

    type: AnomalyType
    t_start: float
    t_end: float
    magnitude: float = 0.0
    sigma_scale: float = 1.0

    def covers(self, t):
        return (t >= self.t_start) & (t < self.t_end)


@dataclass(frozen=True)
class Rates:
    imu: float = 200.0
    wheel: float = 100.0
    camera: float = 10.0
    gnss: float = 1.0


@dataclass(frozen=True)
class NoiseLevels:
    """Simulated sensor imperfections (per-sample standard deviations)."""

    sigma_acc: float = 0.03
    sigma_gyro: float = 0.003
    acc_bias_walk: float = 1e-4
    gyro_bias_walk: float = 1e-5
    acc_bias_x: float = 0.02
    acc_bias_y: float = -0.015
    acc_bias_z: float = 0.01
    gyro_bias_x: float = 0.002
    gyro_bias_y: float = -0.003
    gyro_bias_z: float = 0.004
    wheel_sigma_v: float = 0.02
    wheel_sigma_w: float = 0.002
    wheel_speed_scale: float = 0.015
    wheel_yaw_scale: float = 0.03
    pixel_sigma: float = 0.5
    depth_sigma_a: float = 0.002
    depth_sigma_b: float = 0.001
    depth_dropout: float = 0.05
    pr_sigma: float = 1.0
    dop_sigma: float = 0.05
    clock_bias: float = 50.0
    clock_drift: float = 0.2
    clock_walk: float = 0.05

    @classmethod
    def zero(cls) -> "NoiseLevels":
        return cls(**{f.name: 0.0 for f in fields(cls)})


@dataclass(frozen=True)
class Scenario:
    primitive: str = "StraightLine"
    params: dict = field(default_factory=dict)
    duration: float = 10.0
    rates: Rates = field(default_factory=Rates)
    noise: NoiseLevels = field(default_factory=NoiseLevels)
    landmarks: int = 0               # 0 = scale with path length
    landmark_density: float = 10.0   # landmarks per meter of path when landmarks == 0
    satellites: int = 8
    gnss: bool = False
    dynamic_fraction: float = 0.2
    heading: float = 0.0
    anomalies: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise BadScenario(f"unknown trajectory primitive {self.primitive!r}")
        unknown = set(self.params) - set(DEFAULTS[self.primitive])
        if unknown:
            raise BadScenario(f"unknown parameters for {self.primitive}: {sorted(unknown)}")
        if self.duration <= 0:
            raise BadScenario("duration must be positive")
        if min(self.rates.imu, self.rates.wheel, self.rates.camera, self.rates.gnss) <= 0:
            raise BadScenario("sensor rates must be positive")
        if not 0 <= self.satellites <= 12:
            raise BadScenario("satellite count must be within 0..12")
        for ev in self.anomalies:
            if not 0 <= ev.t_start < ev.t_end <= self.duration:
                raise BadScenario(f"anomaly interval [{ev.t_start}, {ev.t_end}) outside the run")

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))


# ------------------------------------------------------------------ file form

_SCENARIO_KEYS = {"primitive", "duration", "landmarks", "landmark_density", "satellites",
                  "gnss", "dynamic_fraction", "heading", "seed"}


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_scenario(text: str) -> Scenario:
    """Parse the bracketed key=value scenario format.

    Sections: ``[scenario]``, ``[trajectory]`` (primitive parameters),
    ``[rates]``, ``[noise]`` and any number of ``[anomaly.<name>]``.
    Unknown sections or keys raise :class:`BadScenario`.
    """
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise BadScenario(str(exc)) from exc
    kwargs: dict = {}
    anomalies = []
    for section in cp.sections():
        items = dict(cp.items(section))
        if section == "scenario":
            bad = set(items) - _SCENARIO_KEYS
            if bad:
                raise BadScenario(f"unknown keys in [scenario]: {sorted(bad)}")
            for key, val in items.items():
                if key == "primitive":
                    kwargs[key] = val.strip()
                elif key == "gnss":
                    kwargs[key] = val.strip().lower() in ("1", "true", "yes", "on")
                else:
                    kwargs[key] = _number(val)
        elif section == "trajectory":
            kwargs["params"] = {k: float(v) for k, v in items.items()}
        elif section == "rates":
            try:
                kwargs["rates"] = Rates(**{k: float(v) for k, v in items.items()})
            except TypeError as exc:
                raise BadScenario(f"bad [rates]: {exc}") from exc
        elif section == "noise":
            if items.get("profile", "").strip() == "zero":
                base = NoiseLevels.zero()
                items.pop("profile")
            else:
                items.pop("profile", None)
                base = NoiseLevels()
            try:
                kwargs["noise"] = replace(base, **{k: float(v) for k, v in items.items()})
            except TypeError as exc:
                raise BadScenario(f"bad [noise]: {exc}") from exc
        elif section.startswith("anomaly"):
            bad = set(items) - {"type", "t_start", "t_end", "magnitude", "sigma_scale"}
            if bad or "type" not in items:
                raise BadScenario(f"bad keys in [{section}]")
            try:
                kind = AnomalyType(items["type"].strip())
            except ValueError as exc:
                raise BadScenario(f"unknown anomaly type {items['type']!r}") from exc
            anomalies.append(AnomalyEvent(kind, float(items["t_start"]), float(items["t_end"]),
                                          float(items.get("magnitude", 0.0)),
                                          float(items.get("sigma_scale", 1.0))))
        else:
            raise BadScenario(f"unknown section [{section}]")
    kwargs["anomalies"] = tuple(anomalies)
    return Scenario(**kwargs)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def format_scenario(sc: Scenario) -> str:
    lines = ["[scenario]", f"primitive = {sc.primitive}", f"duration = {sc.duration!r}",
             f"landmarks = {sc.landmarks}", f"landmark_density = {sc.landmark_density!r}",
             f"satellites = {sc.satellites}", f"gnss = {str(sc.gnss).lower()}",
             f"dynamic_fraction = {sc.dynamic_fraction!r}", f"heading = {sc.heading!r}",
             f"seed = {sc.seed}", ""]
    if sc.params:
        lines.append("[trajectory]")
        lines += [f"{k} = {v!r}" for k, v in sorted(sc.params.items())]
        lines.append("")
    lines.append("[rates]")
    lines += [f"{f.name} = {getattr(sc.rates, f.name)!r}" for f in fields(Rates)]
    lines += ["", "[noise]"]
    lines += [f"{f.name} = {getattr(sc.noise, f.name)!r}" for f in fields(NoiseLevels)]
    for i, ev in enumerate(sc.anomalies):
        lines += ["", f"[anomaly.{i}]", f"type = {ev.type.value}", f"t_start = {ev.t_start!r}",
                  f"t_end = {ev.t_end!r}", f"magnitude = {ev.magnitude!r}",
                  f"sigma_scale = {ev.sigma_scale!r}"]
    return "\n".join(lines) + "\n"
