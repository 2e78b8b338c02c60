"""Schur-complement marginalization into a dense linear prior."""
from __future__ import annotations

import numpy as np

from .factors import PriorFactor
from .solver import Layout, assemble


def _sym_inverse(H, floor):
    w, U = np.linalg.eigh(0.5 * (H + H.T))
    inv = np.where(w > floor, 1.0 / np.where(w > floor, w, 1.0), 0.0)
    return (U * inv) @ U.T


def prior_from_information(keys, values, H, b, floor: float = 1e-12):
    """Square-root form of ``0.5 dx^T H dx + b^T dx``.

    Eigenvalues below ``floor`` are raised to it; their residual components
    are zero because the gradient there carries no information.
    """
    w, U = np.linalg.eigh(0.5 * (H + H.T))
    kept = w > floor
    w = np.where(kept, w, floor)
    sq = np.sqrt(w)
    J = sq[:, None] * U.T
    r0 = np.where(kept, (U.T @ b) / sq, 0.0)
    return PriorFactor(keys, values, J, r0)


def marginalize(factors, values: dict, marg_keys, floor: float = 1e-12, huber_delta: float = 1.0):
    """Eliminate ``marg_keys`` from the joint linearization of ``factors``.

    Returns a :class:`PriorFactor` on every other variable the factors touch,
    or None when nothing remains.
    """
    marg = [k for k in marg_keys]
    keys = set()
    for f in factors:
        keys |= f.all_keys()
    kept = sorted(keys - set(marg), key=str)
    if not kept:
        return None
    marg = [k for k in marg if k in keys]
    layout = Layout(list(keys), values)
    H, b, _ = assemble(factors, values, layout, huber_delta)
    mi = np.concatenate([layout.columns[k] for k in marg]) if marg else np.zeros(0, int)
    ki = np.concatenate([layout.columns[k] for k in kept])
    Hkk = H[np.ix_(ki, ki)]
    bk = b[ki]
    if len(mi):
        Hmm_inv = _sym_inverse(H[np.ix_(mi, mi)], floor)
        Hkm = H[np.ix_(ki, mi)]
        Hkk = Hkk - Hkm @ Hmm_inv @ Hkm.T
        bk = bk - Hkm @ Hmm_inv @ b[mi]
    return prior_from_information(kept, values, Hkk, bk, floor)


def drop_from_prior(prior: PriorFactor, values: dict, keys, floor: float = 1e-12):
    """Marginalize variables out of an existing prior alone."""
    keys = [k for k in keys if k in prior.keys]
    if not keys:
        return prior
    return marginalize([prior], values, keys, floor)
