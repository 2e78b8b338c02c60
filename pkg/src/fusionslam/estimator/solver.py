"""Levenberg-Marquardt over a dictionary of manifold variables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..errors import DeadVariable, SolverDiverged
from .factors import Factor, huber_rho
from .state import retract, tangent_dim


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 10
    step_tolerance: float = 1e-8
    cost_tolerance: float = 1e-10
    huber_delta: float = 1.0
    max_rejections: int = 10
    initial_lambda: float = 1e-8
    eigen_floor: float = 1e-12


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = True
    rejections: int = 0
    history: list = field(default_factory=list)


class Layout:
    """Column index of every free tangent coordinate.

    ``fixed`` maps a key either to True (whole variable held) or to a boolean
    mask over its tangent coordinates (True = held).
    """

    def __init__(self, keys, values, fixed=None):
        fixed = fixed or {}
        self.columns = {}
        col = 0
        for key in sorted(keys, key=str):
            d = tangent_dim(key, values[key])
            held = fixed.get(key, False)
            mask = np.zeros(d, bool) if held is False else (
                np.ones(d, bool) if held is True else np.asarray(held, bool))
            idx = np.full(d, -1)
            free = ~mask
            idx[free] = col + np.arange(free.sum())
            col += int(free.sum())
            self.columns[key] = idx
        self.size = col
        # lookup table for vectorized assembly; held columns and None map to ``size``
        keys = list(self.columns)
        width = max((len(v) for v in self.columns.values()), default=1)
        self.row = {k: i for i, k in enumerate(keys)}
        self.row[None] = len(keys)
        self.table = np.full((len(keys) + 1, width), self.size)
        for i, k in enumerate(keys):
            v = self.columns[k]
            self.table[i, :len(v)] = np.where(v < 0, self.size, v)

    def expand(self, key, dx) -> np.ndarray:
        idx = self.columns[key]
        out = np.zeros(len(idx))
        sel = idx >= 0
        out[sel] = dx[idx[sel]]
        return out


def _robust_weights(lin, robust: bool, delta: float):
    s = np.sum(lin.r * lin.r, axis=1)
    if not robust:
        return s, np.ones_like(s)
    rho, drho = huber_rho(s, delta)
    return rho, np.sqrt(drho)


def factor_cost(factor: Factor, values: dict, delta: float = 1.0) -> float:
    lin = factor.linearization(values)
    rho, _ = _robust_weights(lin, factor.robust, delta)
    return 0.5 * float(rho.sum())


def total_cost(factors, values: dict, delta: float = 1.0) -> float:
    return float(sum(factor_cost(f, values, delta) for f in factors))


def assemble(factors, values: dict, layout: Layout, delta: float = 1.0):
    """Robustified normal equations ``(H, b, cost)`` with ``b = J^T r``.

    Robust groups are reweighted by ``sqrt(rho')`` (iteratively reweighted
    least squares). Blocks are accumulated per slot pair with ``bincount``;
    held coordinates go to a dummy column that is cut off at the end.
    """
    n_col = layout.size + 1
    dummy = layout.size
    h_idx, h_val, b_idx, b_val = [], [], [], []
    cost = 0.0
    for f in factors:
        for key in f.all_keys():
            if key not in values:
                raise DeadVariable(f"factor {f.kind.value} references missing variable {key}")
        lin = f.linearization(values)
        rho, w = _robust_weights(lin, f.robust, delta)
        cost += 0.5 * float(rho.sum())
        r = lin.r * w[:, None]
        slots = []
        for slot in lin.slots:
            d = slot.J.shape[2]
            rows = [layout.row[key] for key in slot.keys]
            idx = layout.table[rows, slot.offset:slot.offset + d]
            if np.all(idx == dummy):
                continue
            slots.append((idx, slot.J * w[:, None, None]))
        single = len(r) == 1
        for ia, Ja in slots:
            b_idx.append(ia.ravel())
            b_val.append((Ja[0].T @ r[0]) if single else np.einsum("nmi,nm->ni", Ja, r).ravel())
            for ib, Jb in slots:
                blk = (Ja[0].T @ Jb[0]) if single else np.einsum("nmi,nmj->nij", Ja, Jb)
                h_idx.append((ia[:, :, None] * n_col + ib[:, None, :]).ravel())
                h_val.append(blk.ravel())
    if not h_idx:
        return np.zeros((layout.size, layout.size)), np.zeros(layout.size), cost
    H = np.bincount(np.concatenate(h_idx), np.concatenate(h_val), minlength=n_col * n_col)
    b = np.bincount(np.concatenate(b_idx), np.concatenate(b_val), minlength=n_col)
    return H.reshape(n_col, n_col)[:dummy, :dummy], b[:dummy], cost


def _solve_damped(H, b, lam):
    D = np.clip(np.diag(H), 1e-8, None)
    A = H + lam * np.diag(D)
    try:
        c = scipy.linalg.cho_factor(A)
        return -scipy.linalg.cho_solve(c, b)
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(A, b, rcond=None)[0]


def _apply(values, layout, dx):
    out = dict(values)
    for key, idx in layout.columns.items():
        if np.any(idx >= 0):
            out[key] = retract(key, values[key], layout.expand(key, dx))
    return out


def solve(factors, values: dict, fixed=None, config: SolverConfig = SolverConfig()):
    """Minimize the summed factor cost; returns ``(values, SolveReport)``.

    Only variables touched by some factor are optimized; ``values`` is not
    modified in place.
    """
    factors = list(factors)
    keys = set()
    for f in factors:
        keys |= f.all_keys()
    missing = [k for k in keys if k not in values]
    if missing:
        raise DeadVariable(f"factors reference missing variables {missing[:3]}")
    report = SolveReport()
    if not factors:
        return dict(values), report
    layout = Layout(keys, values, fixed)
    H, b, cost = assemble(factors, values, layout, config.huber_delta)
    report.initial_cost = report.final_cost = cost
    if layout.size == 0:
        return dict(values), report

    lam = config.initial_lambda
    rejections = 0
    current = dict(values)
    report.converged = False
    while report.iterations < config.max_iterations:
        report.iterations += 1
        dx = _solve_damped(H, b, lam)
        if not np.all(np.isfinite(dx)):
            raise SolverDiverged("non-finite update")
        trial = _apply(current, layout, dx)
        H_t, b_t, new_cost = assemble(factors, trial, layout, config.huber_delta)
        if np.isfinite(new_cost) and new_cost <= cost:
            decrease = cost - new_cost
            current, H, b = trial, H_t, b_t
            report.history.append(new_cost)
            rejections = 0
            lam = max(lam / 3.0, 1e-12)
            small_step = np.linalg.norm(dx) < config.step_tolerance
            small_decrease = decrease <= config.cost_tolerance * max(cost, 1e-300)
            cost = new_cost
            if small_step or small_decrease:
                report.converged = True
                break
        else:
            # an increase at round-off level means we are sitting on the minimum
            if np.isfinite(new_cost) and new_cost - cost <= 1e-10 * max(cost, 1e-12):
                report.converged = True
                break
            rejections += 1
            report.rejections += 1
            if rejections >= config.max_rejections:
                raise SolverDiverged(f"cost increased on {rejections} consecutive attempts")
            lam = max(lam * 10.0, 1e-4)
    if report.iterations >= config.max_iterations:
        report.converged = report.converged or rejections == 0
    report.final_cost = cost
    return current, report
