"""Feature depth from multiple views, and the keyframe rule."""
from __future__ import annotations

import enum

import numpy as np

from ..errors import LowParallax, NonPositiveDepth
from ..geometry import Pose

MIN_RAY_ANGLE = 1e-3


def triangulate(poses, uvs, extrinsic: Pose, min_angle: float = MIN_RAY_ANGLE) -> float:
    """Depth of a feature in the camera of ``poses[0]``.

    ``poses`` are body-to-world poses, ``uvs`` normalized observations. The
    point is constrained to the host ray and the depth solved in closed form
    by least squares over the cross-product constraints of the other views.
    """
    if len(poses) < 2:
        raise LowParallax("need at least two observations")
    cams = [p.compose(extrinsic) for p in poses]
    rays = [c.R @ np.r_[uv, 1.0] for c, uv in zip(cams, uvs)]
    f0 = rays[0]
    c0 = cams[0].translation
    units = [r / np.linalg.norm(r) for r in rays]
    angle = max(np.arccos(np.clip(units[0] @ u, -1.0, 1.0)) for u in units[1:])
    if angle < min_angle:
        raise LowParallax(f"maximum ray angle {angle:.2e} rad")
    a_rows, b_rows = [], []
    for c, uv in zip(cams[1:], uvs[1:]):
        Rt = c.R.T
        m = np.r_[uv, 1.0]
        # m x (Rt (c0 + d f0 - c_j)) = 0
        a_rows.append(np.cross(m, Rt @ f0))
        b_rows.append(-np.cross(m, Rt @ (c0 - c.translation)))
    a = np.concatenate(a_rows)
    b = np.concatenate(b_rows)
    depth = float(a @ b / (a @ a))
    if not depth > 0:
        raise NonPositiveDepth(f"triangulated depth {depth:.3g} is behind the host camera")
    return depth


class KeyframeChoice(enum.Enum):
    KEYFRAME = "Keyframe"
    DISCARD = "Discard"


def keyframe_decision(parallax: float, gap: float, parallax_threshold: float = 0.01,
                      max_gap: float = 0.5) -> KeyframeChoice:
    if parallax > parallax_threshold or gap > max_gap:
        return KeyframeChoice.KEYFRAME
    return KeyframeChoice.DISCARD


def rms_parallax(uv_a, uv_b) -> float:
    """RMS displacement of matched normalized points."""
    d = np.asarray(uv_a, dtype=float) - np.asarray(uv_b, dtype=float)
    if len(d) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
