"""GNSS observation type, range models and single-point positioning.

Satellites live directly in the local ENU frame (flat-earth model); ranges
are about 2e7 m, so range differences are formed in a cancellation-free way
relative to the ENU origin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSatellites, RankDeficient


@dataclass(frozen=True)
class GnssObservation:
    t: float
    sat_id: int
    sat_pos: np.ndarray
    sat_vel: np.ndarray
    pseudorange: float
    pseudorange_sigma: float
    doppler_range_rate: float
    doppler_sigma: float
    elevation: float
    track_count: int


def range_minus(sat_pos, receiver_pos, reference: float) -> float:
    """``||sat - receiver|| - reference`` without catastrophic cancellation.

    ``reference`` is the measured pseudorange or any value close to
    ``||sat_pos||``.
    """
    s = np.asarray(sat_pos, dtype=float)
    d = np.asarray(receiver_pos, dtype=float)
    s_norm = np.sqrt(s @ s)
    r = np.sqrt((s - d) @ (s - d))
    # ||s - d|| - ||s|| = (d.d - 2 s.d) / (||s - d|| + ||s||)
    return (s_norm - reference) + (d @ d - 2.0 * s @ d) / (r + s_norm)


def line_of_sight(sat_pos, receiver_pos) -> np.ndarray:
    """Unit vector from the receiver to the satellite."""
    d = np.asarray(sat_pos, dtype=float) - np.asarray(receiver_pos, dtype=float)
    return d / np.linalg.norm(d)


def elevation(sat_pos, receiver_pos) -> float:
    return float(np.arcsin(np.clip(line_of_sight(sat_pos, receiver_pos)[2], -1.0, 1.0)))


def range_rate(sat_pos, sat_vel, receiver_pos, receiver_vel) -> float:
    u = line_of_sight(sat_pos, receiver_pos)
    return float(u @ (np.asarray(sat_vel) - np.asarray(receiver_vel)))


def spp(observations, initial=None, iterations: int = 10):
    """Single-point positioning by Gauss-Newton on pseudoranges.

    Returns ``(position, clock_bias)``; clock bias is in meters.
    """
    obs = list(observations)
    if len(obs) < 4:
        raise InsufficientSatellites(f"SPP needs 4 satellites, got {len(obs)}")
    x = np.zeros(4) if initial is None else np.asarray(initial, dtype=float).copy()
    weights = np.array([1.0 / o.pseudorange_sigma for o in obs])
    for _ in range(iterations):
        H = np.zeros((len(obs), 4))
        r = np.zeros(len(obs))
        for i, o in enumerate(obs):
            r[i] = range_minus(o.sat_pos, x[:3], o.pseudorange) + x[3]
            H[i, :3] = -line_of_sight(o.sat_pos, x[:3])
            H[i, 3] = 1.0
        Hw = H * weights[:, None]
        if np.linalg.cond(Hw) > 1e12:
            raise RankDeficient("satellite geometry is degenerate")
        dx = np.linalg.lstsq(Hw, -r * weights, rcond=None)[0]
        x += dx
        if np.linalg.norm(dx) < 1e-10:
            break
    return x[:3], float(x[3])
