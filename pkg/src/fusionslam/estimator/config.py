"""Estimator configuration and its text form."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from ..anomaly import GnssFilterCriteria, WheelAnomalyConfig
from ..config import format_section, read_sections, update_dataclass
from ..errors import ConfigError
from ..motion import MotionThresholds
from .solver import SolverConfig


@dataclass(frozen=True)
class WindowConfig:
    size: int = 10
    keyframe_parallax: float = 0.01     # RMS displacement, normalized image units
    keyframe_gap: float = 0.5
    init_frames: int = 10
    zupt_imu_window: float = 0.5
    bias_acc_limit: float = 1.0
    bias_gyro_limit: float = 0.2

    def __post_init__(self):
        if self.size < 2 or self.init_frames < 3:
            raise ConfigError("window needs at least 2 keyframes and 3 init frames")


@dataclass(frozen=True)
class VisionConfig:
    enabled: bool = True
    mcc_enabled: bool = True
    mcc_threshold: float = 0.0075        # normalized image units
    flow_back_threshold: float = 0.005
    depth_agree: float = 0.1
    validation_angle: float = 0.03      # rad; below this triangulation is too weak to judge
    free_depth_range: tuple = (0.1, 50.0)
    min_observations: int = 2


@dataclass(frozen=True)
class GnssConfig:
    enabled: bool = True
    clock_walk_sigma: float = 0.2       # m / sqrt(s)
    global_min_epochs: int = 5
    global_min_length: float = 5.0
    yaw_sigma: float = 0.05
    anchor_sigma: float = 2.0
    drift_sigma: float = 0.5


@dataclass(frozen=True)
class PriorConfig:
    position: float = 1e-3
    yaw: float = 1e-3
    tilt: float = 0.01
    velocity: float = 0.1
    bias_acc: float = 0.05
    bias_gyro: float = 0.01


@dataclass(frozen=True)
class EstimatorConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    motion: MotionThresholds = field(default_factory=MotionThresholds)
    wheel: WheelAnomalyConfig = field(default_factory=WheelAnomalyConfig)
    vision: VisionConfig = field(default_factory=VisionConfig)
    gnss: GnssConfig = field(default_factory=GnssConfig)
    gnss_filter: GnssFilterCriteria = field(default_factory=GnssFilterCriteria)
    solver: SolverConfig = field(default_factory=SolverConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)


def parse_config(text: str) -> EstimatorConfig:
    """Parse a bracketed ``key = value`` file; missing entries keep defaults."""
    cfg = EstimatorConfig()
    sections = read_sections(text)
    names = {f.name for f in fields(cfg)}
    parts = {}
    for name, items in sections.items():
        if name not in names:
            raise ConfigError(f"unknown section [{name}]")
        parts[name] = update_dataclass(getattr(cfg, name), items, name)
    return EstimatorConfig(**{n: parts.get(n, getattr(cfg, n)) for n in names})


def load_config(path) -> EstimatorConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: EstimatorConfig) -> str:
    lines = []
    for f in fields(cfg):
        lines += format_section(f.name, getattr(cfg, f.name)) + [""]
    return "\n".join(lines)
