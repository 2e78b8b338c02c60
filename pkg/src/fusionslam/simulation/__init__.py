"""Deterministic scenario simulator."""
from .scenario import (AnomalyEvent, AnomalyType, NoiseLevels, Rates, Scenario,
                       format_scenario, load_scenario, parse_scenario)
from .trajectory import PRIMITIVES, TimeWarp, Trajectory, TruthState

__all__ = ["AnomalyEvent", "AnomalyType", "NoiseLevels", "PRIMITIVES", "Rates", "Scenario",
           "TimeWarp", "Trajectory", "TruthState", "format_scenario", "load_scenario",
           "parse_scenario"]
