"""Factor kinds with whitened residuals and analytic Jacobians.

Every factor produces a :class:`Linearization`: residual groups ``r`` of
shape ``(n, m)`` and a list of slots, each slot naming one variable per group
and holding its Jacobian ``(n, m, d)``. A group is the unit to which the
robust loss applies (one visual observation, one GNSS measurement).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import DeadVariable
from ..geometry import (Pose, exp_rot, log_rot, quat_to_rot, right_jacobian,
                        right_jacobian_inv, rot_z, skew, skew_batch)
from ..gnss import GnssObservation, line_of_sight, range_minus
from ..preintegration import A, B, BA as IBA, BG as IBG, TH, PreintegratedImu, PreintegratedWheel
from .state import BA, BG, DBA, DBG, DP, DTH, DV, P, Q, V, minus, minus_jacobian, tangent_dim


class FactorKind(enum.Enum):
    IMU = "ImuPreint"
    WHEEL = "WheelPreint"
    VISUAL = "VisualReproj"
    PSEUDORANGE = "Pseudorange"
    DOPPLER = "Doppler"
    CLOCK = "ClockWalk"
    PRIOR = "MarginalPrior"
    LINEAR = "Linear"


@dataclass
class Slot:
    keys: list            # one key per group, or None for a constant
    J: np.ndarray         # (n, m, d)
    offset: int = 0       # first tangent column of the variable touched by J


@dataclass
class Linearization:
    r: np.ndarray         # (n, m)
    slots: list


def whitener(cov) -> np.ndarray:
    """Matrix ``W`` with ``W^T W = cov^{-1}``."""
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    try:
        L = np.linalg.cholesky(cov)
        return np.linalg.inv(L)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(cov)
        w = np.maximum(w, 1e-18)
        return (U / np.sqrt(w)).T


def huber_rho(s, delta: float):
    """Huber loss of a squared norm ``s``; returns ``(rho, d rho / d s)``."""
    s = np.asarray(s, dtype=float)
    d2 = delta * delta
    root = np.sqrt(np.maximum(s, 1e-300))
    rho = np.where(s <= d2, s, 2.0 * delta * root - d2)
    drho = np.where(s <= d2, 1.0, delta / root)
    return rho, drho


def quat_to_rot_batch(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


class Factor:
    kind: FactorKind = FactorKind.LINEAR
    robust: bool = False
    keys: tuple = ()

    def linearize(self, values: dict):
        """Return ``(residual (m,), [J per key (m, d)])``, whitened."""
        raise NotImplementedError

    def linearization(self, values: dict) -> Linearization:
        r, Js = self.linearize(values)
        return Linearization(np.asarray(r, dtype=float)[None, :],
                             [Slot([k], np.asarray(J, dtype=float)[None]) for k, J in zip(self.keys, Js)])

    def all_keys(self) -> set:
        return set(self.keys)


def evaluate_factor(factor: Factor, values: dict):
    """Whitened residual and dense Jacobian per connected variable.

    The robust loss is not applied here; see the solver.
    """
    for key in factor.all_keys():
        if key not in values:
            raise DeadVariable(f"factor {factor.kind.value} references missing variable {key}")
    lin = factor.linearization(values)
    n, m = lin.r.shape
    blocks: dict = {}
    for slot in lin.slots:
        for g in range(n):
            key = slot.keys[g]
            if key is None:
                continue
            if key not in blocks:
                blocks[key] = np.zeros((n * m, tangent_dim(key, values[key])))
            d = slot.J.shape[2]
            blocks[key][g * m:(g + 1) * m, slot.offset:slot.offset + d] += slot.J[g]
    return lin.r.ravel(), blocks


# ------------------------------------------------------------------- IMU

class ImuFactor(Factor):
    kind = FactorKind.IMU

    def __init__(self, key_i, key_j, preint: PreintegratedImu, gravity_vector):
        self.keys = (key_i, key_j)
        self.preint = preint
        self.g = np.asarray(gravity_vector, dtype=float)
        self.W = whitener(preint.covariance)

    def raw(self, values):
        xi, xj = values[self.keys[0]], values[self.keys[1]]
        p = self.preint
        dt = p.dt
        Ri, Rj = quat_to_rot(xi[Q]), quat_to_rot(xj[Q])
        dba = xi[BA] - p.bias_acc
        dbg = xi[BG] - p.bias_gyro
        Jm = p.jacobian
        alpha = p.alpha + Jm[A, IBA] @ dba + Jm[A, IBG] @ dbg
        beta = p.beta + Jm[B, IBA] @ dba + Jm[B, IBG] @ dbg
        phi = Jm[TH, IBG] @ dbg
        Rg = p.R @ exp_rot(phi)
        dpos = xj[P] - xi[P] - xi[V] * dt - 0.5 * self.g * dt * dt
        dvel = xj[V] - xi[V] - self.g * dt
        E = Rg.T @ Ri.T @ Rj
        r = np.empty(15)
        r[0:3] = Ri.T @ dpos - alpha
        r[3:6] = Ri.T @ dvel - beta
        r[6:9] = log_rot(E)
        r[9:12] = xj[BA] - xi[BA]
        r[12:15] = xj[BG] - xi[BG]
        return r, (xi, xj, Ri, Rj, dpos, dvel, E, phi, dt)

    def linearize(self, values):
        r, (xi, xj, Ri, Rj, dpos, dvel, E, phi, dt) = self.raw(values)
        Jm = self.preint.jacobian
        I3 = np.eye(3)
        Jri = right_jacobian_inv(r[6:9])
        Ji = np.zeros((15, 15))
        Jj = np.zeros((15, 15))
        Ji[0:3, DP] = -Ri.T
        Ji[0:3, DTH] = skew(Ri.T @ dpos)
        Ji[0:3, DV] = -Ri.T * dt
        Ji[0:3, DBA] = -Jm[A, IBA]
        Ji[0:3, DBG] = -Jm[A, IBG]
        Ji[3:6, DTH] = skew(Ri.T @ dvel)
        Ji[3:6, DV] = -Ri.T
        Ji[3:6, DBA] = -Jm[B, IBA]
        Ji[3:6, DBG] = -Jm[B, IBG]
        Ji[6:9, DTH] = -Jri @ Rj.T @ Ri
        Ji[6:9, DBG] = -Jri @ E.T @ right_jacobian(phi) @ Jm[TH, IBG]
        Ji[9:12, DBA] = -I3
        Ji[12:15, DBG] = -I3
        Jj[0:3, DP] = Ri.T
        Jj[3:6, DV] = Ri.T
        Jj[6:9, DTH] = Jri
        Jj[9:12, DBA] = I3
        Jj[12:15, DBG] = I3
        return self.W @ r, [self.W @ Ji, self.W @ Jj]


# ----------------------------------------------------------------- wheel

class WheelFactor(Factor):
    kind = FactorKind.WHEEL

    def __init__(self, key_i, key_j, preint: PreintegratedWheel, extrinsic_wheel_to_body: Pose):
        self.keys = (key_i, key_j)
        self.preint = preint
        self.Rbo = extrinsic_wheel_to_body.R
        self.tbo = extrinsic_wheel_to_body.translation
        self.W = whitener(preint.covariance)

    def linearize(self, values):
        xi, xj = values[self.keys[0]], values[self.keys[1]]
        Ri, Rj = quat_to_rot(xi[Q]), quat_to_rot(xj[Q])
        Roi, Roj = Ri @ self.Rbo, Rj @ self.Rbo
        poi = xi[P] + Ri @ self.tbo
        poj = xj[P] + Rj @ self.tbo
        D = poj - poi
        E = self.preint.R.T @ Roi.T @ Roj
        r = np.r_[Roi.T @ D - self.preint.delta_p, log_rot(E)]
        Jri = right_jacobian_inv(r[3:6])
        tx = skew(self.tbo)
        Ji = np.zeros((6, 15))
        Jj = np.zeros((6, 15))
        Ji[0:3, DP] = -Roi.T
        Ji[0:3, DTH] = skew(Roi.T @ D) @ self.Rbo.T + self.Rbo.T @ tx
        Jj[0:3, DP] = Roi.T
        Jj[0:3, DTH] = -Roi.T @ Rj @ tx
        Ji[3:6, DTH] = -Jri @ Roj.T @ Roi @ self.Rbo.T
        Jj[3:6, DTH] = Jri @ self.Rbo.T
        return self.W @ r, [self.W @ Ji, self.W @ Jj]


# ---------------------------------------------------------------- visual

class VisualBatch(Factor):
    """Reprojection of many features from their host frame into target frames.

    ``depth_keys[k]`` names a free depth variable or is None, in which case
    ``depths[k]`` is held constant.
    """

    kind = FactorKind.VISUAL
    robust = True

    def __init__(self, host_keys, target_keys, uv_host, uv_target, extrinsic_cam_to_body: Pose,
                 sigma: float, depth_keys=None, depths=None, feature_ids=None):
        n = len(host_keys)
        self.host_keys = list(host_keys)
        self.target_keys = list(target_keys)
        self.depth_keys = list(depth_keys) if depth_keys is not None else [None] * n
        self.depths = np.zeros(n) if depths is None else np.asarray(depths, dtype=float)
        self.uv_h = np.asarray(uv_host, dtype=float).reshape(n, 2)
        self.uv_t = np.asarray(uv_target, dtype=float).reshape(n, 2)
        self.Rbc = extrinsic_cam_to_body.R
        self.tbc = extrinsic_cam_to_body.translation
        self.sigma = float(sigma)
        self.feature_ids = feature_ids
        self.keys = tuple(sorted(set(self.host_keys) | set(self.target_keys)
                                 | {k for k in self.depth_keys if k is not None}, key=str))

    def __len__(self):
        return len(self.host_keys)

    def all_keys(self):
        return set(self.keys)

    def linearization(self, values):
        n = len(self)
        xh = np.array([values[k] for k in self.host_keys]).reshape(n, 16)
        xt = np.array([values[k] for k in self.target_keys]).reshape(n, 16)
        lam = np.array([values[k][0] if k is not None else d
                        for k, d in zip(self.depth_keys, self.depths)], dtype=float)
        Rh = quat_to_rot_batch(xh[:, Q])
        Rt = quat_to_rot_batch(xt[:, Q])
        f = np.column_stack([self.uv_h, np.ones(n)])
        Pbh = (lam[:, None] * f) @ self.Rbc.T + self.tbc
        Pw = np.einsum("nij,nj->ni", Rh, Pbh) + xh[:, P]
        Pbt = np.einsum("nji,nj->ni", Rt, Pw - xt[:, P])
        Pct = (Pbt - self.tbc) @ self.Rbc
        z = Pct[:, 2]
        ok = z > 1e-6
        zs = np.where(ok, z, 1.0)
        r = (Pct[:, :2] / zs[:, None] - self.uv_t) / self.sigma
        dpi = np.zeros((n, 2, 3))
        dpi[:, 0, 0] = 1.0 / zs
        dpi[:, 1, 1] = 1.0 / zs
        dpi[:, 0, 2] = -Pct[:, 0] / zs ** 2
        dpi[:, 1, 2] = -Pct[:, 1] / zs ** 2
        dpi /= self.sigma
        Ab = dpi @ self.Rbc.T                          # d r / d P_bt
        RtT = np.transpose(Rt, (0, 2, 1))
        Jt = np.zeros((n, 2, 6))
        Jt[:, :, 0:3] = -Ab @ RtT
        Jt[:, :, 3:6] = Ab @ skew_batch(Pbt)
        Bw = Ab @ RtT                                  # d r / d P_w
        Jh = np.zeros((n, 2, 6))
        Jh[:, :, 0:3] = Bw
        Jh[:, :, 3:6] = -Bw @ Rh @ skew_batch(Pbh)
        Jd = np.einsum("nij,nj->ni", Bw @ Rh, f @ self.Rbc.T)[:, :, None]
        r[~ok] = 0.0
        Jt[~ok] = 0.0
        Jh[~ok] = 0.0
        Jd[~ok] = 0.0
        return Linearization(r, [Slot(self.host_keys, Jh), Slot(self.target_keys, Jt),
                                 Slot(self.depth_keys, Jd)])


# ------------------------------------------------------------------ GNSS

def _drz(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


class PseudorangeFactor(Factor):
    """Pseudorange of one satellite; the receiver sits at the nearest keyframe
    propagated by its velocity to the epoch time."""

    kind = FactorKind.PSEUDORANGE
    robust = True

    def __init__(self, nav_key, t_state: float, obs: GnssObservation, clk_key):
        self.keys = (nav_key, ("yaw",), ("anchor",), clk_key)
        self.obs = obs
        self.tau = obs.t - t_state

    def linearize(self, values):
        x = values[self.keys[0]]
        yaw = float(values[("yaw",)][0])
        anchor = values[("anchor",)]
        clk = float(values[self.keys[3]][0])
        Rz = rot_z(yaw)
        pl = x[P] + x[V] * self.tau
        pe = anchor + Rz @ pl
        s = 1.0 / self.obs.pseudorange_sigma
        r = (range_minus(self.obs.sat_pos, pe, self.obs.pseudorange) + clk) * s
        u = line_of_sight(self.obs.sat_pos, pe)
        dpe = -u * s
        Jx = np.zeros((1, 15))
        Jx[0, DP] = dpe @ Rz
        Jx[0, DV] = dpe @ Rz * self.tau
        return np.array([r]), [Jx, np.array([[dpe @ _drz(yaw) @ pl]]), dpe[None, :],
                               np.array([[s]])]


class DopplerFactor(Factor):
    kind = FactorKind.DOPPLER
    robust = True

    def __init__(self, nav_key, t_state: float, obs: GnssObservation):
        self.keys = (nav_key, ("yaw",), ("anchor",), ("drift",))
        self.obs = obs
        self.tau = obs.t - t_state

    def linearize(self, values):
        x = values[self.keys[0]]
        yaw = float(values[("yaw",)][0])
        anchor = values[("anchor",)]
        drift = float(values[("drift",)][0])
        Rz, dRz = rot_z(yaw), _drz(yaw)
        pl = x[P] + x[V] * self.tau
        pe = anchor + Rz @ pl
        ve = Rz @ x[V]
        los = self.obs.sat_pos - pe
        rho = np.linalg.norm(los)
        u = los / rho
        vrel = self.obs.sat_vel - ve
        s = 1.0 / self.obs.doppler_sigma
        r = (u @ vrel + drift - self.obs.doppler_range_rate) * s
        c = -(vrel - u * (u @ vrel)) / rho * s        # d r / d p_enu
        dv = -u * s                                    # d r / d v_enu
        Jx = np.zeros((1, 15))
        Jx[0, DP] = c @ Rz
        Jx[0, DV] = c @ Rz * self.tau + dv @ Rz
        Jyaw = c @ dRz @ pl + dv @ dRz @ x[V]
        return np.array([r]), [Jx, np.array([[Jyaw]]), c[None, :], np.array([[s]])]


class ClockFactor(Factor):
    """Random-walk link between the clock biases of two epochs."""

    kind = FactorKind.CLOCK

    def __init__(self, key_a, key_b, dt: float, sigma: float):
        self.keys = (key_a, key_b, ("drift",))
        self.dt = float(dt)
        self.w = 1.0 / (sigma * np.sqrt(max(dt, 1e-3)))

    def linearize(self, values):
        a = float(values[self.keys[0]][0])
        b = float(values[self.keys[1]][0])
        d = float(values[self.keys[2]][0])
        r = (b - a - d * self.dt) * self.w
        return np.array([r]), [np.array([[-self.w]]), np.array([[self.w]]),
                               np.array([[-self.dt * self.w]])]


# ----------------------------------------------------------------- prior

class PriorFactor(Factor):
    """Linear prior ``r0 + J (x - x0)`` on a set of variables."""

    kind = FactorKind.PRIOR

    def __init__(self, keys, origin: dict, J, r0):
        self.keys = tuple(keys)
        self.origin = {k: np.array(origin[k], dtype=float, copy=True) for k in self.keys}
        self.J = np.asarray(J, dtype=float)
        self.r0 = np.asarray(r0, dtype=float)
        dims = [tangent_dim(k, self.origin[k]) for k in self.keys]
        self.offsets = np.r_[0, np.cumsum(dims)].astype(int)

    @classmethod
    def gaussian(cls, key, mean, sigmas) -> "PriorFactor":
        sig = np.asarray(sigmas, dtype=float)
        return cls([key], {key: mean}, np.diag(1.0 / sig), np.zeros(len(sig)))

    def delta(self, values) -> np.ndarray:
        return np.concatenate([minus(k, values[k], self.origin[k]) for k in self.keys])

    def linearize(self, values):
        r = self.r0 + self.J @ self.delta(values)
        Js = []
        for i, k in enumerate(self.keys):
            a, b = self.offsets[i], self.offsets[i + 1]
            Js.append(self.J[:, a:b] @ minus_jacobian(k, values[k], self.origin[k]))
        return r, Js

    def information(self):
        return self.J.T @ self.J, self.J.T @ self.r0


class LinearFactor(Factor):
    """``(sum_k A_k x_k - b) / sigma`` over plain vector variables."""

    def __init__(self, keys, A_blocks, b, sigma=1.0):
        self.keys = tuple(keys)
        self.A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in A_blocks]
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.w = 1.0 / np.asarray(sigma, dtype=float)

    def linearize(self, values):
        r = -self.b.copy()
        for k, a in zip(self.keys, self.A):
            r = r + a @ np.atleast_1d(values[k])
        return r * self.w, [a * np.reshape(self.w, (-1, 1)) for a in self.A]

