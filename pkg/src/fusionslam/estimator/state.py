"""Optimization variables and their manifold operations.

Variables live in a ``dict`` keyed by tuples:

* ``("x", frame_id)`` navigation state, 16 numbers ``[p, q(wxyz), v, b_a, b_g]``
  with a 15-dim tangent ``[dp, dtheta, dv, db_a, db_g]`` (rotation perturbed
  on the right);
* ``("d", feature_id)`` free feature depth in its host camera;
* ``("yaw",)``, ``("anchor",)``, ``("drift",)``, ``("clk", epoch_id)`` GNSS
  alignment and receiver clock states;
* ``("s", name)`` plain vectors for generic problems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import (Pose, log_rot, quat_multiply, quat_normalize, quat_to_rot,
                        right_jacobian_inv, so3_exp, wrap_angle)

P, Q, V, BA, BG = slice(0, 3), slice(3, 7), slice(7, 10), slice(10, 13), slice(13, 16)
# tangent slices
DP, DTH, DV, DBA, DBG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)

NAV_DIM = 15


@dataclass
class NavState:
    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.r_[self.p, quat_normalize(self.q), self.v, self.b_a, self.b_g].astype(float)

    @classmethod
    def from_vector(cls, t: float, x) -> "NavState":
        x = np.asarray(x, dtype=float)
        return cls(t, x[P].copy(), x[V].copy(), x[Q].copy(), x[BA].copy(), x[BG].copy())

    @property
    def pose(self) -> Pose:
        return Pose(self.q, self.p)


def nav_vector(p=(0, 0, 0), q=(1, 0, 0, 0), v=(0, 0, 0), ba=(0, 0, 0), bg=(0, 0, 0)) -> np.ndarray:
    return np.r_[np.asarray(p, float), quat_normalize(q), np.asarray(v, float),
                 np.asarray(ba, float), np.asarray(bg, float)]


def nav_rotation(x) -> np.ndarray:
    return quat_to_rot(x[Q])


def nav_pose(x) -> Pose:
    return Pose(x[Q], x[P])


def dim(key) -> int:
    kind = key[0]
    if kind == "x":
        return NAV_DIM
    if kind == "anchor":
        return 3
    if kind in ("d", "yaw", "drift", "clk"):
        return 1
    if kind == "s":
        return None          # size follows the stored value
    raise KeyError(f"unknown variable kind {kind!r}")


def tangent_dim(key, value) -> int:
    d = dim(key)
    return int(np.size(value)) if d is None else d


def retract(key, value, delta):
    """Apply a tangent update."""
    kind = key[0]
    delta = np.asarray(delta, dtype=float)
    if kind == "x":
        out = value.copy()
        out[P] += delta[DP]
        out[Q] = quat_normalize(quat_multiply(value[Q], so3_exp(delta[DTH])))
        out[V] += delta[DV]
        out[BA] += delta[DBA]
        out[BG] += delta[DBG]
        return out
    if kind == "yaw":
        return np.array([wrap_angle(float(value[0] + delta[0]))])
    return np.asarray(value, dtype=float) + delta.reshape(np.shape(value))


def minus(key, value, origin) -> np.ndarray:
    """Tangent vector taking ``origin`` to ``value``."""
    kind = key[0]
    if kind == "x":
        out = np.empty(NAV_DIM)
        out[DP] = value[P] - origin[P]
        out[DTH] = log_rot(quat_to_rot(origin[Q]).T @ quat_to_rot(value[Q]))
        out[DV] = value[V] - origin[V]
        out[DBA] = value[BA] - origin[BA]
        out[DBG] = value[BG] - origin[BG]
        return out
    if kind == "yaw":
        return np.array([wrap_angle(float(value[0] - origin[0]))])
    return (np.asarray(value, dtype=float) - np.asarray(origin, dtype=float)).ravel()


def minus_jacobian(key, value, origin) -> np.ndarray:
    """Derivative of :func:`minus` with respect to a right perturbation of ``value``."""
    n = tangent_dim(key, value)
    J = np.eye(n)
    if key[0] == "x":
        phi = log_rot(quat_to_rot(origin[Q]).T @ quat_to_rot(value[Q]))
        J[DTH, DTH] = right_jacobian_inv(phi)
    return J


def perturb(values: dict, key, delta) -> dict:
    out = dict(values)
    out[key] = retract(key, values[key], delta)
    return out


def random_nav(rng, scale: float = 1.0) -> np.ndarray:
    """A random navigation state (for tests and finite-difference checks)."""
    q = so3_exp(rng.normal(size=3))
    return nav_vector(rng.normal(size=3) * scale, q, rng.normal(size=3),
                      rng.normal(size=3) * 0.05, rng.normal(size=3) * 0.01)

