"""Trajectory metrics: association, rigid alignment, ATE, RPE, detection scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TumTrajectory
from .errors import TooFewPairs
from .geometry import log_rot, quat_to_rot, rot_z

MAX_DT = 0.01


def associate(t_est, t_gt, max_dt: float = MAX_DT):
    """Index pairs ``(i_est, i_gt)`` matching each estimate to the nearest
    ground-truth time within ``max_dt``."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if len(t_est) == 0 or len(t_gt) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    k = np.clip(np.searchsorted(t_gt, t_est), 1, max(len(t_gt) - 1, 1))
    lo = np.clip(k - 1, 0, len(t_gt) - 1)
    hi = np.clip(k, 0, len(t_gt) - 1)
    j = np.where(np.abs(t_gt[lo] - t_est) <= np.abs(t_gt[hi] - t_est), lo, hi)
    ok = np.abs(t_gt[j] - t_est) <= max_dt
    return np.nonzero(ok)[0], j[ok]


@dataclass
class Alignment:
    R: np.ndarray
    t: np.ndarray
    aligned: np.ndarray

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))


def align_umeyama(est, gt, mode: str = "se3") -> Alignment:
    """Rigid (no scale) least-squares alignment of ``est`` onto ``gt``.

    ``mode`` is ``"se3"`` or ``"yaw-only"`` (rotation about z only).
    """
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(est) != len(gt):
        raise ValueError("alignment needs equally many points")
    if len(est) < 3:
        raise TooFewPairs(f"alignment needs at least 3 pose pairs, got {len(est)}")
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    a, b = est - mu_e, gt - mu_g
    if mode == "se3":
        C = b.T @ a / len(est)
        U, _, Vt = np.linalg.svd(C)
        S = np.eye(3)
        if np.linalg.det(U) * np.linalg.det(Vt) < 0:
            S[2, 2] = -1.0
        R = U @ S @ Vt
    elif mode == "yaw-only":
        yaw = np.arctan2(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]),
                         np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
        R = rot_z(yaw)
    else:
        raise ValueError(f"unknown alignment mode {mode!r}")
    t = mu_g - R @ mu_e
    return Alignment(R, t, est @ R.T + t)


def ate_rmse(aligned, gt) -> float:
    d = np.asarray(aligned, dtype=float) - np.asarray(gt, dtype=float)
    if len(d) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rpe(est: TumTrajectory, gt: TumTrajectory, delta: float = 1.0):
    """RMS relative translation (m) and rotation (rad) error over ``delta`` s.

    Both trajectories must already be associated index by index.
    """
    t = np.asarray(est.t, dtype=float)
    if len(t) < 2:
        return 0.0, 0.0
    Re = [quat_to_rot(q) for q in est.q]
    Rg = [quat_to_rot(q) for q in gt.q]
    et, er = [], []
    for i in range(len(t)):
        j = int(np.searchsorted(t, t[i] + delta - 1e-9))
        if j >= len(t):
            break
        dRe, dpe = Re[i].T @ Re[j], Re[i].T @ (est.p[j] - est.p[i])
        dRg, dpg = Rg[i].T @ Rg[j], Rg[i].T @ (gt.p[j] - gt.p[i])
        E_R = dRg.T @ dRe
        E_t = dRg.T @ (dpe - dpg)
        et.append(np.linalg.norm(E_t))
        er.append(np.linalg.norm(log_rot(E_R)))
    if not et:
        return 0.0, 0.0
    return float(np.sqrt(np.mean(np.square(et)))), float(np.sqrt(np.mean(np.square(er))))


def detection_scores(predicted, truth):
    """Precision and recall of boolean per-frame flags."""
    p = np.asarray(predicted, bool)
    y = np.asarray(truth, bool)
    tp = int(np.sum(p & y))
    precision = tp / int(p.sum()) if p.any() else 1.0
    recall = tp / int(y.sum()) if y.any() else 1.0
    return float(precision), float(recall)


@dataclass
class MetricsReport:
    pairs: int
    ate_rmse: float
    rpe_trans: float
    rpe_rot: float
    delta: float
    init_time: float = float("nan")
    init_ate_10s: float = float("nan")
    detection: dict = field(default_factory=dict)        # name -> (precision, recall)
    factor_means: dict = field(default_factory=dict)     # column -> mean per frame

    def rows(self) -> list[tuple[str, float]]:
        out = [("pairs", float(self.pairs)), ("ate_rmse", self.ate_rmse),
               ("rpe_trans", self.rpe_trans), ("rpe_rot", self.rpe_rot), ("rpe_delta", self.delta),
               ("init_time", self.init_time), ("init_ate_10s", self.init_ate_10s)]
        for name in sorted(self.detection):
            p, r = self.detection[name]
            out += [(f"precision_{name}", p), (f"recall_{name}", r)]
        for name in sorted(self.factor_means):
            out.append((f"mean_{name}", self.factor_means[name]))
        return out

    def to_csv(self) -> str:
        return "metric,value\n" + "".join(f"{k},{v:.9g}\n" for k, v in self.rows())


def evaluate(est: TumTrajectory, gt: TumTrajectory, mode: str = "se3", delta: float = 1.0,
             init_time: float = float("nan")) -> MetricsReport:
    ie, ig = associate(est.t, gt.t)
    if len(ie) == 0:
        raise TooFewPairs("no timestamps associate within 10 ms")
    al = align_umeyama(est.p[ie], gt.p[ig], mode)
    ate = ate_rmse(al.aligned, gt.p[ig])
    sub_e = TumTrajectory(est.t[ie], est.p[ie], est.q[ie])
    sub_g = TumTrajectory(gt.t[ig], gt.p[ig], gt.q[ig])
    rt, rr = rpe(sub_e, sub_g, delta)
    early = est.t[ie] <= est.t[ie][0] + 10.0
    init_ate = float("nan")
    if early.sum() >= 3:
        a10 = align_umeyama(est.p[ie][early], gt.p[ig][early], mode)
        init_ate = ate_rmse(a10.aligned, gt.p[ig][early])
    return MetricsReport(len(ie), ate, rt, rr, delta, init_time, init_ate)
