"""Analytic ground-truth trajectories for ground vehicles.

Every primitive returns position, velocity, acceleration, heading and
heading rate in closed form, so sensor synthesis never differentiates
numerically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BadScenario
from ..geometry import rot_z

PRIMITIVES = ("Static", "StraightLine", "Arc", "Zigzag", "StopAndGo", "SlopeClimb", "Loop")

# default parameters per primitive
DEFAULTS = {
    "Static": {},
    "StraightLine": {"speed": 1.0},
    "Arc": {"speed": 1.0, "yaw_rate": 0.5},
    "Zigzag": {"speed": 1.0, "amplitude": 1.0, "period": 6.0},
    "StopAndGo": {"speed": 1.0, "move_time": 8.0, "stop_time": 4.0},
    "SlopeClimb": {"speed": 0.8, "grade": 0.1},
    "Loop": {"radius_x": 10.0, "radius_y": 6.0, "period": 60.0},
}


@dataclass
class TruthState:
    """Vectorised ground truth at an array of times."""

    t: np.ndarray
    p: np.ndarray        # (n, 3) world position
    v: np.ndarray        # (n, 3) world velocity
    a: np.ndarray        # (n, 3) world acceleration
    R: np.ndarray        # (n, 3, 3) body-to-world rotation
    omega: np.ndarray    # (n, 3) body-frame angular velocity


def _planar(t, x, y, dx, dy, ddx, ddy):
    zeros = np.zeros_like(t)
    p = np.stack([x, y, zeros], axis=1)
    v = np.stack([dx, dy, zeros], axis=1)
    a = np.stack([ddx, ddy, zeros], axis=1)
    speed2 = dx * dx + dy * dy
    yaw = np.arctan2(dy, dx)
    yaw_rate = (dx * ddy - dy * ddx) / speed2
    return p, v, a, yaw, yaw_rate


def _straight(t, s, ds, dds, heading=0.0, pitch=0.0):
    c, sn = np.cos(pitch), np.sin(pitch)
    d = np.array([c, 0.0, sn])
    p = s[:, None] * d
    v = ds[:, None] * d
    a = dds[:, None] * d
    return p, v, a, np.full_like(t, heading), np.zeros_like(t)


def _stop_and_go(t, speed, move, stop):
    cycle = move + stop
    n = np.floor(t / cycle)
    tau = t - n * cycle
    moving = tau < move
    tm = np.minimum(tau, move)
    w = 2.0 * np.pi / move
    s = n * speed * move / 2.0 + speed * (tm / 2.0 - np.sin(w * tm) / (2.0 * w))
    ds = np.where(moving, speed * (1.0 - np.cos(w * tau)) / 2.0, 0.0)
    dds = np.where(moving, speed * w * np.sin(w * tau) / 2.0, 0.0)
    return s, ds, dds


def primitive_kinematics(name: str, params: dict, t: np.ndarray):
    """(p, v, a, yaw, yaw_rate, pitch) of a primitive at times ``t``."""
    t = np.asarray(t, dtype=float)
    P = {**DEFAULTS[name], **params}
    pitch = 0.0
    if name == "Static":
        z = np.zeros((len(t), 3))
        out = (z, z.copy(), z.copy(), np.zeros_like(t), np.zeros_like(t))
    elif name == "StraightLine":
        v = P["speed"]
        out = _straight(t, v * t, np.full_like(t, v), np.zeros_like(t))
    elif name == "Arc":
        v, w = P["speed"], P["yaw_rate"]
        r = v / w
        x, y = r * np.sin(w * t), r * (1.0 - np.cos(w * t))
        dx, dy = v * np.cos(w * t), v * np.sin(w * t)
        ddx, ddy = -v * w * np.sin(w * t), v * w * np.cos(w * t)
        out = _planar(t, x, y, dx, dy, ddx, ddy)
    elif name == "Zigzag":
        v, A, T = P["speed"], P["amplitude"], P["period"]
        w = 2.0 * np.pi / T
        x, dx, ddx = v * t, np.full_like(t, v), np.zeros_like(t)
        y, dy, ddy = A * np.sin(w * t), A * w * np.cos(w * t), -A * w * w * np.sin(w * t)
        out = _planar(t, x, y, dx, dy, ddx, ddy)
    elif name == "StopAndGo":
        s, ds, dds = _stop_and_go(t, P["speed"], P["move_time"], P["stop_time"])
        out = _straight(t, s, ds, dds)
    elif name == "SlopeClimb":
        v = P["speed"]
        pitch = float(np.arctan(P["grade"]))
        out = _straight(t, v * t, np.full_like(t, v), np.zeros_like(t), pitch=pitch)
    elif name == "Loop":
        ax, by, T = P["radius_x"], P["radius_y"], P["period"]
        w = 2.0 * np.pi / T
        x, y = ax * np.sin(w * t), by * (1.0 - np.cos(w * t))
        dx, dy = ax * w * np.cos(w * t), by * w * np.sin(w * t)
        ddx, ddy = -ax * w * w * np.sin(w * t), by * w * w * np.cos(w * t)
        out = _planar(t, x, y, dx, dy, ddx, ddy)
    else:
        raise BadScenario(f"unknown trajectory primitive {name!r}")
    return (*out, pitch)


class TimeWarp:
    """Smooth slow-down of the trajectory clock on ``[t0, t1)``.

    The clock rate drops to ``scale`` with raised-cosine ramps, so the warped
    trajectory stays C1.
    """

    def __init__(self, t0: float, t1: float, scale: float):
        if not 0.0 < scale <= 1.0 or t1 <= t0:
            raise BadScenario("low-speed segment needs 0 < scale <= 1 and t1 > t0")
        self.t0, self.t1, self.k = t0, t1, 1.0 - scale
        self.r = min(1.0, (t1 - t0) / 4.0)

    def _window(self, t):
        t0, t1, r = self.t0, self.t1, self.r
        up = (t - t0) / r
        down = (t1 - t) / r
        w = np.ones_like(t)
        dw = np.zeros_like(t)
        W = np.zeros_like(t)
        m_up = (t >= t0) & (t < t0 + r)
        m_dn = (t > t1 - r) & (t <= t1)
        w[m_up] = 0.5 * (1 - np.cos(np.pi * up[m_up]))
        dw[m_up] = 0.5 * np.pi / r * np.sin(np.pi * up[m_up])
        w[m_dn] = 0.5 * (1 - np.cos(np.pi * down[m_dn]))
        dw[m_dn] = -0.5 * np.pi / r * np.sin(np.pi * down[m_dn])
        outside = (t < t0) | (t > t1)
        w[outside] = 0.0
        # integral of the window from -inf to t
        tc = np.clip(t, t0, t0 + r)
        W += (tc - t0) / 2.0 - r / (2 * np.pi) * np.sin(np.pi * (tc - t0) / r)
        mid = np.clip(t, t0 + r, t1 - r) - (t0 + r)
        W += np.where(t > t0 + r, mid, 0.0)
        td = np.clip(t, t1 - r, t1)
        u = (td - (t1 - r)) / r
        part = r * (u / 2.0 + np.sin(np.pi * u) / (2 * np.pi))
        W += np.where(t > t1 - r, part, 0.0)
        return w, dw, W

    def __call__(self, t):
        w, dw, W = self._window(np.asarray(t, dtype=float))
        return t - self.k * W, 1.0 - self.k * w, -self.k * dw


class Trajectory:
    """Ground-truth trajectory: a primitive, optional time warps and a rigid
    placement (start position and heading) in the ENU world frame."""

    def __init__(self, primitive: str, params: dict | None = None,
                 warps: list[TimeWarp] | None = None, start=(0.0, 0.0, 0.0),
                 heading: float = 0.0):
        if primitive not in PRIMITIVES:
            raise BadScenario(f"unknown trajectory primitive {primitive!r}")
        unknown = set(params or {}) - set(DEFAULTS[primitive])
        if unknown:
            raise BadScenario(f"unknown parameters for {primitive}: {sorted(unknown)}")
        self.primitive = primitive
        self.params = {**DEFAULTS[primitive], **(params or {})}
        for key, val in self.params.items():
            if key != "grade" and val <= 0:
                raise BadScenario(f"{primitive}.{key} must be positive")
        self.warps = list(warps or [])
        self.start = np.asarray(start, dtype=float)
        self.heading = float(heading)

    def _clock(self, t):
        s = np.asarray(t, dtype=float)
        ds = np.ones_like(s)
        dds = np.zeros_like(s)
        for warp in self.warps:
            s2, d2, dd2 = warp(s)
            dds = dd2 * ds * ds + d2 * dds
            ds = d2 * ds
            s = s2
        return s, ds, dds

    def __call__(self, t) -> TruthState:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s, ds, dds = self._clock(t)
        p, v, a, yaw, yaw_rate, pitch = primitive_kinematics(self.primitive, self.params, s)
        a = a * (ds * ds)[:, None] + v * dds[:, None]
        v = v * ds[:, None]
        yaw_rate = yaw_rate * ds

        Rh = rot_z(self.heading)
        p = p @ Rh.T + self.start
        v = v @ Rh.T
        a = a @ Rh.T
        yaw = yaw + self.heading

        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        # R = Rz(yaw) @ Ry(-pitch): nose up for positive pitch
        R = np.zeros((len(t), 3, 3))
        R[:, 0, 0] = cy * cp
        R[:, 0, 1] = -sy
        R[:, 0, 2] = -cy * sp
        R[:, 1, 0] = sy * cp
        R[:, 1, 1] = cy
        R[:, 1, 2] = -sy * sp
        R[:, 2, 0] = sp
        R[:, 2, 1] = 0.0
        R[:, 2, 2] = cp
        omega_world = np.zeros((len(t), 3))
        omega_world[:, 2] = yaw_rate
        omega = np.einsum("nji,nj->ni", R, omega_world)
        return TruthState(t, p, v, a, R, omega)

    def path_length(self, duration: float, step: float = 0.05) -> float:
        ts = np.arange(0.0, duration + step, step)
        p = self(ts).p
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))
