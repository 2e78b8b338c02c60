"""Window initialization: stationary, visual (PnP) and wheel-aided dynamic,
plus the optional alignment of the local frame to GNSS."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureFrame
from .errors import (DegenerateTrajectory, ImplausibleGravity, InsufficientSatellites,
                     PnPFailed, RankDeficient, VoteFailed, WheelGap)
from .geometry import (Calibration, Pose, exp_rot, gravity_aligning_rotation, log_rot,
                       quat_to_rot, rot_to_quat, rot_z, wrap_angle)
from .gnss import line_of_sight, range_minus, spp
from .motion import MotionClass, MotionThresholds, classify, glrt, stationary_vote, visual_parallax
from .preintegration import (BG, TH, ImuData, WheelData, imu_bias_correct,
                             wheel_displacement_norm, wheel_preintegrate)

MIN_PNP_POINTS = 8
MAX_WHEEL_GAP = 0.1


class InitMethod(enum.Enum):
    STATIONARY = "Stationary"
    VISUAL = "Visual"
    DYNAMIC = "Dynamic"


@dataclass
class InitWindow:
    """Frames collected before initialization with their preintegrations."""

    times: np.ndarray
    frames: list
    imu: list            # PreintegratedImu per consecutive frame pair
    wheel: list          # PreintegratedWheel per consecutive frame pair
    imu_data: ImuData
    wheel_data: WheelData

    def __len__(self):
        return len(self.times)


@dataclass
class InitResult:
    """Window states in a gravity-aligned local frame (z up)."""

    method: InitMethod
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    rotations: np.ndarray          # (n, 4) body-to-world quaternions
    gyro_bias: np.ndarray
    gravity: np.ndarray            # gravity vector in the pre-alignment reference frame
    success: bool = True
    elapsed_init_time: float = 0.0
    acc_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class VelocityGravityState:
    """Stacked unknowns: per-frame body velocities followed by gravity."""

    velocities: np.ndarray   # (n, 3) in each body frame
    gravity: np.ndarray      # (3,) in the reference frame
    A: np.ndarray
    b: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.r_[self.velocities.ravel(), self.gravity]


# -------------------------------------------------------------- evidence

@dataclass
class WindowEvidence:
    G: float
    W: float
    V: float
    motion: MotionClass
    stationary: bool


def window_tracks(frames) -> list:
    """Matches of every window image against the latest one."""
    if not frames:
        return []
    last = frames[-1]
    tracks = []
    for fr in frames[:-1]:
        common, ia, ib = np.intersect1d(fr.ids, last.ids, return_indices=True)
        tracks.append((fr.uv[ia], last.uv[ib]))
    return tracks


def gather_evidence(window: InitWindow, thresholds: MotionThresholds,
                    calib: Calibration) -> WindowEvidence:
    G = glrt(window.imu_data, calib.sigma_acc, calib.sigma_gyro, calib.gravity)
    W = wheel_displacement_norm(wheel_preintegrate(window.wheel_data, calib.wheel_sigma_v,
                                                   calib.wheel_sigma_w))
    V = visual_parallax(window_tracks(window.frames))
    return WindowEvidence(G, W, V, classify(G, thresholds), stationary_vote(G, W, V, thresholds))


def choose_method(window: InitWindow, thresholds: MotionThresholds, calib: Calibration,
                  evidence: WindowEvidence | None = None) -> InitMethod:
    ev = evidence or gather_evidence(window, thresholds, calib)
    if ev.stationary:
        return InitMethod.STATIONARY
    if ev.motion is MotionClass.SLOW:
        try:
            visual_poses(window, calib)
            return InitMethod.VISUAL
        except (PnPFailed, RankDeficient):
            pass
    return InitMethod.DYNAMIC


# ------------------------------------------------------------- stationary

def init_stationary(window: InitWindow, thresholds: MotionThresholds, calib: Calibration,
                    evidence: WindowEvidence | None = None) -> InitResult:
    ev = evidence or gather_evidence(window, thresholds, calib)
    if not ev.stationary:
        raise VoteFailed("window is not stationary")
    acc = window.imu_data.acc.mean(axis=0)
    R0 = gravity_aligning_rotation(acc)
    n = len(window)
    q = np.tile(rot_to_quat(R0), (n, 1))
    return InitResult(InitMethod.STATIONARY, np.asarray(window.times, dtype=float),
                      np.zeros((n, 3)), np.zeros((n, 3)), q, window.imu_data.gyro.mean(axis=0),
                      calib.gravity_vector.copy())


# ------------------------------------------------------------------- PnP

def pnp_to_imu_pose(cam_pose: Pose, extrinsic: Pose) -> Pose:
    """Body pose from a camera pose and the camera-to-body extrinsic."""
    return cam_pose.compose(extrinsic.inverse())


def solve_pnp(points, uv, initial: Pose | None = None, iterations: int = 15) -> Pose:
    """Camera pose (camera-to-reference) from 3D points and normalized image points."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    u = np.asarray(uv, dtype=float).reshape(-1, 2)
    if len(P) < MIN_PNP_POINTS:
        raise PnPFailed(f"PnP needs {MIN_PNP_POINTS} correspondences, got {len(P)}")
    pose = initial or Pose.identity()
    R, t = pose.R, pose.translation.copy()
    keep = np.ones(len(P), dtype=bool)
    for it in range(iterations):
        X = (P - t) @ R
        z = X[:, 2]
        if np.any(z[keep] <= 1e-6):
            raise PnPFailed("point behind the camera during PnP")
        r = X[:, :2] / z[:, None] - u
        if it == 5:
            err = np.linalg.norm(r, axis=1)
            med = np.median(err[keep])
            keep &= err < max(6.0 * 1.4826 * med, 1e-6)
            if keep.sum() < MIN_PNP_POINTS:
                raise PnPFailed("too few PnP inliers")
        Jp = np.zeros((len(P), 2, 3))
        Jp[:, 0, 0] = 1.0 / z
        Jp[:, 1, 1] = 1.0 / z
        Jp[:, 0, 2] = -X[:, 0] / z ** 2
        Jp[:, 1, 2] = -X[:, 1] / z ** 2
        J = np.concatenate([np.einsum("nij,njk->nik", Jp, skew_rows(X)),
                            -np.einsum("nij,kj->nik", Jp, R)], axis=2)
        Jk = J[keep].reshape(-1, 6)
        rk = r[keep].ravel()
        H = Jk.T @ Jk
        if np.linalg.cond(H) > 1e12:
            raise PnPFailed("PnP geometry is degenerate")
        dx = -np.linalg.solve(H, Jk.T @ rk)
        R = R @ exp_rot(dx[:3])
        t = t + dx[3:]
        if np.linalg.norm(dx) < 1e-12:
            break
    return Pose.from_matrix(R, t)


def skew_rows(X: np.ndarray) -> np.ndarray:
    out = np.zeros((len(X), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -X[:, 2], X[:, 1]
    out[:, 1, 0], out[:, 1, 2] = X[:, 2], -X[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -X[:, 1], X[:, 0]
    return out


def visual_poses(window: InitWindow, calib: Calibration) -> list[Pose]:
    """Camera poses relative to the first camera from RGB-D tracks."""
    frames = window.frames
    poses = [Pose.identity()]
    landmarks: dict[int, np.ndarray] = {}

    def add_points(fr: FeatureFrame, pose: Pose):
        ok = np.isfinite(fr.depth) & (fr.depth > calib.depth_range[0]) & (fr.depth < calib.depth_range[1])
        pc = np.column_stack([fr.uv[ok], np.ones(ok.sum())]) * fr.depth[ok, None]
        for fid, pw in zip(fr.ids[ok], pose.apply(pc)):
            landmarks[int(fid)] = pw

    add_points(frames[0], poses[0])
    for fr in frames[1:]:
        known = np.array([int(i) in landmarks for i in fr.ids], dtype=bool)
        if known.sum() < MIN_PNP_POINTS:
            raise PnPFailed(f"frame at t={fr.t:.3f} has {known.sum()} usable correspondences")
        pts = np.array([landmarks[int(i)] for i in fr.ids[known]])
        pose = solve_pnp(pts, fr.uv[known], poses[-1])
        poses.append(pose)
        add_points(fr, pose)
    return poses


# ------------------------------------------------------ gyro bias, gravity

def calibrate_gyro_bias(rotations, preints, iterations: int = 2) -> np.ndarray:
    """Gyro bias change that makes preintegrated rotations agree with ``rotations``.

    ``rotations`` are body-to-reference rotation matrices or quaternions.
    """
    Rs = [quat_to_rot(r) if np.shape(r) == (4,) else np.asarray(r, dtype=float) for r in rotations]
    preints = list(preints)
    if len(Rs) < 2 or len(preints) < len(Rs) - 1:
        raise RankDeficient("gyro bias calibration needs at least two frames")
    delta = np.zeros(3)
    for _ in range(iterations):
        H = np.zeros((3, 3))
        g = np.zeros(3)
        for k, p in enumerate(preints[:len(Rs) - 1]):
            _, _, gamma = imu_bias_correct(p, np.zeros(3), delta)
            J = p.jacobian[TH, BG]
            r = log_rot(quat_to_rot(gamma).T @ Rs[k].T @ Rs[k + 1])
            H += J.T @ J
            g += J.T @ r
        if np.linalg.cond(H) > 1e12:
            raise RankDeficient("rotation set does not constrain the gyro bias")
        delta = delta + np.linalg.solve(H, g)
    return delta


def _vg_system(poses, preints, gravity_basis=None, gravity_fixed=None):
    """Linear system in body velocities and gravity (or its tangent update)."""
    n = len(poses)
    ng = 3 if gravity_basis is None else 2
    A = np.zeros((6 * (n - 1), 3 * n + ng))
    b = np.zeros(6 * (n - 1))
    for k in range(n - 1):
        (pi, Ri), (pj, Rj) = poses[k], poses[k + 1]
        p = preints[k]
        dt = p.dt
        rows = slice(6 * k, 6 * k + 6)
        blk = np.zeros((6, 3 * n + 3))
        rhs = np.zeros(6)
        blk[0:3, 3 * k:3 * k + 3] = -dt * np.eye(3)
        blk[0:3, 3 * n:] = -0.5 * dt * dt * Ri.T
        rhs[0:3] = p.alpha - Ri.T @ (pj - pi)
        blk[3:6, 3 * k:3 * k + 3] = -np.eye(3)
        blk[3:6, 3 * (k + 1):3 * (k + 2)] = Ri.T @ Rj
        blk[3:6, 3 * n:] = -dt * Ri.T
        rhs[3:6] = p.beta
        if gravity_basis is None:
            A[rows] = blk
            b[rows] = rhs
        else:
            A[rows, :3 * n] = blk[:, :3 * n]
            A[rows, 3 * n:] = blk[:, 3 * n:] @ gravity_basis
            b[rows] = rhs - blk[:, 3 * n:] @ gravity_fixed
    return A, b


def _normalize_poses(poses):
    out = []
    for P in poses:
        if isinstance(P, Pose):
            out.append((P.translation, P.R))
        else:
            p, R = P
            R = quat_to_rot(R) if np.shape(R) == (4,) else np.asarray(R, dtype=float)
            out.append((np.asarray(p, dtype=float), R))
    return out


def solve_velocity_gravity(poses, preints) -> VelocityGravityState:
    """Least-squares body velocities and reference-frame gravity."""
    poses = _normalize_poses(poses)
    n = len(poses)
    if n < 3:
        raise RankDeficient("velocity and gravity need at least three frames")
    A, b = _vg_system(poses, preints)
    if np.linalg.cond(A.T @ A) > 1e12:
        raise RankDeficient("velocity-gravity system is singular")
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    return VelocityGravityState(x[:3 * n].reshape(n, 3), x[3 * n:], A, b)


def _tangent_basis(g):
    d = g / np.linalg.norm(g)
    tmp = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(d, tmp)
    b1 /= np.linalg.norm(b1)
    return np.column_stack([b1, np.cross(d, b1)])


def refine_gravity(state: VelocityGravityState, g_magnitude: float, poses=None,
                   preints=None, iterations: int = 4) -> VelocityGravityState:
    """Re-solve with gravity confined to the sphere of radius ``g_magnitude``.

    The linear system stored on ``state`` is reused unless poses and
    preintegrations are given.
    """
    g = np.asarray(state.gravity, dtype=float)
    norm = np.linalg.norm(g)
    if not 0.5 * g_magnitude <= norm <= 1.5 * g_magnitude:
        raise ImplausibleGravity(f"|g| = {norm:.3f} is far from {g_magnitude}")
    n = len(state.velocities)
    if poses is not None:
        poses = _normalize_poses(poses)
    A_full, b_full = state.A, state.b
    g = g / norm * g_magnitude
    v = state.velocities
    for _ in range(iterations):
        B = _tangent_basis(g)
        if poses is not None:
            A, b = _vg_system(poses, preints, B, g)
        else:
            A = np.column_stack([A_full[:, :3 * n], A_full[:, 3 * n:] @ B])
            b = b_full - A_full[:, 3 * n:] @ g
        x = np.linalg.lstsq(A, b, rcond=None)[0]
        v = x[:3 * n].reshape(n, 3)
        g = g + B @ x[3 * n:]
        g = g / np.linalg.norm(g) * g_magnitude
    return VelocityGravityState(v, g, A_full, b_full)


def _align_to_gravity(poses, velocities_body, gravity):
    """Rotate reference-frame poses so that gravity points along -z."""
    Ra = gravity_aligning_rotation(-gravity)
    ps, qs, vs = [], [], []
    for (p, R), vb in zip(poses, velocities_body):
        Rw = Ra @ R
        ps.append(Ra @ p)
        qs.append(rot_to_quat(Rw))
        vs.append(Rw @ vb)
    p0 = ps[0].copy()
    return np.array(ps) - p0, np.array(vs), np.array(qs)


def _repropagate_all(preints, bg):
    return [p.repropagate(p.bias_acc, bg) for p in preints]


# ----------------------------------------------------------------- visual

def init_visual(window: InitWindow, calib: Calibration) -> InitResult:
    cams = visual_poses(window, calib)
    bodies = [pnp_to_imu_pose(c, calib.extrinsic_cam_to_body) for c in cams]
    bg0 = window.imu[0].bias_gyro
    dbg = calibrate_gyro_bias([b.R for b in bodies], window.imu)
    bg = bg0 + dbg
    preints = _repropagate_all(window.imu, bg)
    poses = _normalize_poses(bodies)
    state = solve_velocity_gravity(poses, preints)
    state = refine_gravity(state, calib.gravity, poses, preints)
    p, v, q = _align_to_gravity(poses, state.velocities, state.gravity)
    return InitResult(InitMethod.VISUAL, np.asarray(window.times, dtype=float), p, v, q, bg,
                      state.gravity)


# ---------------------------------------------------------------- dynamic

def wheel_poses(preints, extrinsic_wheel_to_body: Pose) -> list[Pose]:
    """Body poses in the first wheel frame from chained wheel increments."""
    inv = extrinsic_wheel_to_body.inverse()
    R = np.eye(3)
    p = np.zeros(3)
    out = [Pose.from_matrix(R, p).compose(inv)]
    for w in preints:
        p = p + R @ w.delta_p
        R = R @ w.R
        out.append(Pose.from_matrix(R, p).compose(inv))
    return out


def check_wheel_coverage(data: WheelData, t0: float, t1: float, max_gap: float = MAX_WHEEL_GAP):
    t = np.asarray(data.t)
    if len(t) == 0:
        raise WheelGap("no wheel samples in the window")
    edges = np.r_[t[0] - t0, np.diff(t), t1 - t[-1]]
    if np.any(edges > max_gap + 1e-9):
        raise WheelGap(f"wheel stream has a gap of {edges.max():.3f} s")


def init_dynamic(window: InitWindow, calib: Calibration) -> InitResult:
    """Wheel-aided initialization; feature observations are never read."""
    times = np.asarray(window.times, dtype=float)
    check_wheel_coverage(window.wheel_data, times[0], times[-1])
    bodies = wheel_poses(window.wheel, calib.extrinsic_wheel_to_body)
    bg0 = window.imu[0].bias_gyro
    bg = bg0 + calibrate_gyro_bias([b.R for b in bodies], window.imu)
    preints = _repropagate_all(window.imu, bg)
    poses = _normalize_poses(bodies)
    state = solve_velocity_gravity(poses, preints)
    state = refine_gravity(state, calib.gravity, poses, preints)
    p, v, q = _align_to_gravity(poses, state.velocities, state.gravity)
    return InitResult(InitMethod.DYNAMIC, times, p, v, q, bg, state.gravity)


def initialize(window: InitWindow, thresholds: MotionThresholds, calib: Calibration,
               t_first: float | None = None) -> InitResult:
    """Pick a method from the window evidence and run it."""
    ev = gather_evidence(window, thresholds, calib)
    method = choose_method(window, thresholds, calib, ev)
    if method is InitMethod.STATIONARY:
        res = init_stationary(window, thresholds, calib, ev)
    elif method is InitMethod.VISUAL:
        res = init_visual(window, calib)
    else:
        res = init_dynamic(window, calib)
    start = window.times[0] if t_first is None else t_first
    res.elapsed_init_time = float(window.times[-1] - start)
    return res


# ----------------------------------------------------------------- global

@dataclass
class GlobalInit:
    yaw: float
    anchor: np.ndarray
    clock_bias: dict          # epoch time -> bias (m)
    clock_drift: float
    spp_positions: np.ndarray


def _rz_derivative(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def init_global(local_times, local_positions, local_velocities, epochs,
                min_epochs: int = 5, min_length: float = 5.0,
                iterations: int = 10) -> GlobalInit:
    """Yaw, anchor and clock states aligning the local frame to ENU.

    ``epochs`` is a list of filtered observation lists; local states are
    interpolated at each epoch time.
    """
    lt = np.asarray(local_times, dtype=float)
    lp = np.asarray(local_positions, dtype=float)
    lv = np.asarray(local_velocities, dtype=float)
    usable = [e for e in epochs if len(e) >= 4 and lt[0] - 1e-9 <= e[0].t <= lt[-1] + 1e-9]
    if len(usable) < min_epochs:
        raise InsufficientSatellites(f"need {min_epochs} epochs with 4+ satellites, have {len(usable)}")
    length = float(np.sum(np.linalg.norm(np.diff(lp, axis=0), axis=1)))
    if length < min_length:
        raise DegenerateTrajectory(f"trajectory length {length:.2f} m leaves yaw unobservable")

    te = np.array([e[0].t for e in usable])
    pl = np.column_stack([np.interp(te, lt, lp[:, i]) for i in range(3)])
    vl = np.column_stack([np.interp(te, lt, lv[:, i]) for i in range(3)])

    # step 1: single-point positioning
    fixes, clocks = [], []
    guess = None
    for e in usable:
        pos, clk = spp(e, guess)
        guess = np.r_[pos, clk]
        fixes.append(pos)
        clocks.append(clk)
    fixes = np.array(fixes)

    # step 2: yaw + translation alignment (closed form in the plane)
    a = pl - pl.mean(axis=0)
    b = fixes - fixes.mean(axis=0)
    yaw = float(np.arctan2(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]),
                           np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])))
    anchor = fixes.mean(axis=0) - rot_z(yaw) @ pl.mean(axis=0)
    dts = np.diff(te)
    drift = float(np.median(np.diff(clocks) / dts)) if len(dts) else 0.0

    # step 3: joint refinement against raw pseudorange and Doppler
    m = len(usable)
    x = np.r_[yaw, anchor, np.array(clocks), drift]
    for _ in range(iterations):
        rows, res = [], []
        Rz, dRz = rot_z(x[0]), _rz_derivative(x[0])
        for k, e in enumerate(usable):
            rx = x[1:4] + Rz @ pl[k]
            vx = Rz @ vl[k]
            for o in e:
                u = line_of_sight(o.sat_pos, rx)
                J = np.zeros(len(x))
                w = 1.0 / o.pseudorange_sigma
                J[0] = -u @ (dRz @ pl[k])
                J[1:4] = -u
                J[4 + k] = 1.0
                rows.append(J * w)
                res.append((range_minus(o.sat_pos, rx, o.pseudorange) + x[4 + k]) * w)
                w = 1.0 / o.doppler_sigma
                J = np.zeros(len(x))
                J[0] = -u @ (dRz @ vl[k])
                J[-1] = 1.0
                rows.append(J * w)
                res.append((u @ (o.sat_vel - vx) + x[-1] - o.doppler_range_rate) * w)
        H = np.array(rows)
        r = np.array(res)
        dx = np.linalg.lstsq(H, -r, rcond=None)[0]
        x = x + dx
        if np.linalg.norm(dx) < 1e-10:
            break
    return GlobalInit(wrap_angle(float(x[0])), x[1:4].copy(),
                      {float(t): float(c) for t, c in zip(te, x[4:4 + m])}, float(x[-1]), fixes)
