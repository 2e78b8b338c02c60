"""Sensor synthesis and anomaly injection on top of analytic ground truth."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..dataset import Dataset, FeatureFrame, TumTrajectory, frame_labels
from ..geometry import Calibration, rot_to_quat
from ..gnss import GnssObservation
from ..preintegration import ImuData, WheelData
from .scenario import AnomalyType, Scenario
from .trajectory import TimeWarp, Trajectory

SAT_RANGE = 2.0e7
SAT_SPEED = 3000.0
MAX_FEATURES = 60        # tracked features per image, lowest ids first
BASE_LANDMARKS = 80      # placed ahead of the start pose
DYNAMIC_SPEED = 0.5


def generate_truth(scenario: Scenario) -> Trajectory:
    """Continuous-time ground truth; low-speed segments slow the clock."""
    warps = [TimeWarp(ev.t_start, ev.t_end, ev.magnitude if ev.magnitude > 0 else 0.2)
             for ev in scenario.anomalies if ev.type is AnomalyType.LOW_SPEED_SEGMENT]
    return Trajectory(scenario.primitive, scenario.params, warps, heading=scenario.heading)


def sample_times(rate: float, duration: float) -> np.ndarray:
    n = int(np.floor(duration * rate + 1e-9))
    return np.arange(n + 1) / rate


def _rngs(seed: int) -> dict:
    names = ("imu", "wheel", "landmarks", "features", "gnss", "inject")
    seqs = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


# ------------------------------------------------------------------- sensors

def _bias_track(rng, n, dt, start, walk):
    steps = rng.standard_normal((n, 3)) * walk * np.sqrt(dt)
    steps[0] = 0.0
    return np.asarray(start, dtype=float) + np.cumsum(steps, axis=0)


def synth_imu(traj: Trajectory, sc: Scenario, calib: Calibration, rng) -> ImuData:
    nz = sc.noise
    t = sample_times(sc.rates.imu, sc.duration)
    s = traj(t)
    g = calib.gravity_vector
    acc = np.einsum("nji,nj->ni", s.R, s.a - g)
    gyro = s.omega.copy()
    dt = 1.0 / sc.rates.imu
    ba = _bias_track(rng, len(t), dt, [nz.acc_bias_x, nz.acc_bias_y, nz.acc_bias_z], nz.acc_bias_walk)
    bg = _bias_track(rng, len(t), dt, [nz.gyro_bias_x, nz.gyro_bias_y, nz.gyro_bias_z],
                     nz.gyro_bias_walk)
    acc += ba + rng.standard_normal(acc.shape) * nz.sigma_acc
    gyro += bg + rng.standard_normal(gyro.shape) * nz.sigma_gyro
    return ImuData(t, acc, gyro)


def synth_wheel(traj: Trajectory, sc: Scenario, calib: Calibration, rng) -> WheelData:
    nz = sc.noise
    t = sample_times(sc.rates.wheel, sc.duration)
    s = traj(t)
    Tw = calib.extrinsic_wheel_to_body
    Rbo = Tw.R
    # wheel-frame velocity of the wheel origin: R_bo^T (R^T v + omega x t_bo)
    v_body = np.einsum("nji,nj->ni", s.R, s.v) + np.cross(s.omega, Tw.translation)
    v = v_body @ Rbo
    w = (s.omega @ Rbo)[:, 2]
    v[:, 2] = 0.0
    v[:, 0] *= 1.0 + nz.wheel_speed_scale
    w = w * (1.0 + nz.wheel_yaw_scale)
    v[:, :2] += rng.standard_normal((len(t), 2)) * nz.wheel_sigma_v
    w = w + rng.standard_normal(len(t)) * nz.wheel_sigma_w
    return WheelData(t, v, w)


def place_landmarks(traj: Trajectory, sc: Scenario, rng) -> np.ndarray:
    """Landmarks scattered ahead of the vehicle along its path."""
    ts = np.linspace(0.0, sc.duration, max(2, int(sc.duration * 20) + 1))
    st = traj(ts)
    seg = np.linalg.norm(np.diff(st.p, axis=0), axis=1)
    arc = np.r_[0.0, np.cumsum(seg)]
    length = arc[-1]
    if sc.landmarks > 0:
        n_path, n_base = int(sc.landmarks * 0.7), sc.landmarks - int(sc.landmarks * 0.7)
        if length < 1e-6:
            n_path, n_base = 0, sc.landmarks
    else:
        n_path, n_base = int(round(sc.landmark_density * length)), BASE_LANDMARKS
    anchors = np.r_[np.zeros(n_base), np.sort(rng.uniform(0.0, length, n_path))]
    idx = np.clip(np.searchsorted(arc, anchors), 0, len(ts) - 1)
    n = len(anchors)
    fwd = rng.uniform(1.0, 7.5, n)
    lat = rng.uniform(-0.9, 0.9, n) * fwd
    up = rng.uniform(-0.5, 1.6, n)
    out = np.empty((n, 3))
    for k in range(n):
        R = st.R[idx[k]]
        heading = np.array([R[0, 0], R[1, 0], 0.0])
        heading /= np.linalg.norm(heading)
        left = np.array([-heading[1], heading[0], 0.0])
        out[k] = st.p[idx[k]] + fwd[k] * heading + lat[k] * left + np.array([0.0, 0.0, up[k]])
    return out


def _landmark_positions(base, dyn_vel, events, t):
    pos = base.copy()
    for ev in events:
        span = np.clip(t, ev.t_start, ev.t_end) - ev.t_start
        pos += dyn_vel * span
    return pos


def synth_features(traj: Trajectory, sc: Scenario, calib: Calibration, landmarks,
                   dyn_vel, rng) -> list[FeatureFrame]:
    nz = sc.noise
    K = calib.intrinsics
    Tc = calib.extrinsic_cam_to_body
    t = sample_times(sc.rates.camera, sc.duration)
    st = traj(t)
    zmin, zmax = calib.depth_range
    dyn_events = [ev for ev in sc.anomalies if ev.type is AnomalyType.DYNAMIC_FEATURES]
    frames = []
    w, h = 2.0 * K.cx, 2.0 * K.cy
    for k, tk in enumerate(t):
        pts = _landmark_positions(landmarks, dyn_vel, dyn_events, tk)
        Rwc = st.R[k] @ Tc.R
        pwc = st.p[k] + st.R[k] @ Tc.translation
        pc = (pts - pwc) @ Rwc
        z = pc[:, 2]
        ok = (z > zmin) & (z < zmax)
        xy = np.zeros((len(pts), 2))
        xy[ok] = pc[ok, :2] / z[ok, None]
        px = K.to_pixels(xy)
        ok &= (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
        ids = np.flatnonzero(ok)[:MAX_FEATURES]
        # noise draws are made for every landmark so visibility never shifts the stream
        pix_noise = rng.standard_normal((len(pts), 2)) * nz.pixel_sigma
        depth_noise = rng.standard_normal(len(pts))
        drop = rng.random(len(pts)) < nz.depth_dropout
        uv = K.to_normalized(px[ids] + pix_noise[ids])
        d = z[ids] + depth_noise[ids] * (nz.depth_sigma_a + nz.depth_sigma_b * z[ids] ** 2)
        d = np.where(drop[ids], np.nan, d)
        frames.append(FeatureFrame(float(tk), k, ids.astype(int), uv, d))
    return frames


def constellation(count: int, rng):
    """Satellite start positions and velocities in the ENU frame."""
    if count == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    az = (np.arange(count) * 2.0 * np.pi / count + rng.uniform(0, 2 * np.pi)) % (2 * np.pi)
    el = np.deg2rad(np.where(np.arange(count) % 3 == 0, rng.uniform(60, 85, count),
                             rng.uniform(20, 60, count)))
    dirs = np.column_stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])
    pos = SAT_RANGE * dirs
    ref = np.where(np.abs(dirs[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    perp = np.cross(dirs, ref)
    perp /= np.linalg.norm(perp, axis=1, keepdims=True)
    return pos, SAT_SPEED * perp


def synth_gnss(traj: Trajectory, sc: Scenario, rng) -> list[GnssObservation]:
    if not sc.gnss or sc.satellites == 0:
        return []
    nz = sc.noise
    pos0, vel = constellation(sc.satellites, rng)
    t = sample_times(sc.rates.gnss, sc.duration)
    st = traj(t)
    walk = rng.standard_normal(len(t)) * nz.clock_walk
    walk[0] = 0.0
    clock = nz.clock_bias + nz.clock_drift * t + np.cumsum(walk)
    out = []
    for k, tk in enumerate(t):
        pr_noise = rng.standard_normal(len(pos0))
        dop_noise = rng.standard_normal(len(pos0))
        for i in range(len(pos0)):
            s = pos0[i] + vel[i] * tk
            los = s - st.p[k]
            r = np.linalg.norm(los)
            u = los / r
            el = float(np.arcsin(u[2]))
            scale = 1.0 / max(np.sin(el), 0.1)
            pr_sig = max(nz.pr_sigma, 1e-3) * scale
            dop_sig = max(nz.dop_sigma, 1e-4) * scale
            pr = r + clock[k] + pr_noise[i] * nz.pr_sigma * scale
            dop = float(u @ (vel[i] - st.v[k])) + nz.clock_drift + dop_noise[i] * nz.dop_sigma * scale
            out.append(GnssObservation(float(tk), i, s, vel[i].copy(), float(pr), pr_sig, dop,
                                       dop_sig, el, k + 1))
    return out


# ----------------------------------------------------------------- injection

def inject(ds: Dataset, anomalies, rng, pixel_sigma: float = 0.5) -> tuple[Dataset, dict]:
    """Apply post-hoc corruptions and return per-frame labels.

    LowSpeedSegment and DynamicFeatures act on the truth and are applied at
    synthesis time; they are only labelled here. ``pixel_sigma`` is the
    nominal pixel noise that a blur burst multiplies tenfold.
    """
    wheel = WheelData(ds.wheel.t.copy(), ds.wheel.velocity.copy(), ds.wheel.yaw_rate.copy())
    frames = list(ds.frames)
    gnss = list(ds.gnss)
    sigma_blur = 9.0 * pixel_sigma / ds.calibration.intrinsics.fx
    for ev in anomalies:
        kind = ev.type
        if kind in (AnomalyType.WHEEL_SLIP, AnomalyType.CARPET_PULL, AnomalyType.SUSPENSION):
            m = ev.covers(wheel.t)
            if kind is AnomalyType.WHEEL_SLIP:
                wheel.velocity[m, 0] += ev.magnitude
            elif kind is AnomalyType.CARPET_PULL:
                wheel.velocity[m] = 0.0
                wheel.yaw_rate[m] = 0.0
            else:
                wheel.velocity[m, 0] = ev.magnitude
                wheel.velocity[m, 1] = 0.0
        elif kind is AnomalyType.FEATURE_DROPOUT:
            frames = [FeatureFrame.empty(f.t, f.frame_id) if ev.covers(f.t) else f for f in frames]
        elif kind is AnomalyType.FEATURE_NOISE_BURST:
            burst = []
            for f in frames:
                if ev.covers(f.t) and len(f):
                    keep = rng.random(len(f)) >= 0.5
                    f = f.subset(keep)
                    # tenfold total noise: add nine more sigmas on top of the nominal
                    extra = rng.standard_normal(f.uv.shape) * sigma_blur
                    f = replace(f, uv=f.uv + extra)
                burst.append(f)
            frames = burst
        elif kind is AnomalyType.GNSS_OUTAGE:
            gnss = [o for o in gnss if not ev.covers(o.t)]
        elif kind is AnomalyType.GNSS_DEGRADE:
            kept = int(ev.magnitude) if ev.magnitude > 0 else None
            out = []
            for o in gnss:
                if ev.covers(o.t):
                    if kept is not None and o.sat_id >= kept:
                        continue
                    if ev.sigma_scale > 1.0:
                        extra = np.sqrt(ev.sigma_scale ** 2 - 1.0)
                        o = replace(o,
                                    pseudorange=o.pseudorange + rng.standard_normal() * extra * o.pseudorange_sigma,
                                    pseudorange_sigma=o.pseudorange_sigma * ev.sigma_scale,
                                    doppler_range_rate=o.doppler_range_rate + rng.standard_normal() * extra * o.doppler_sigma,
                                    doppler_sigma=o.doppler_sigma * ev.sigma_scale)
                out.append(o)
            gnss = out
    gnss = _recount_tracks(gnss)
    out = replace(ds, wheel=wheel, frames=frames, gnss=gnss, anomalies=list(anomalies))
    return out, frame_labels([f.t for f in frames], anomalies)


def _recount_tracks(gnss):
    """Consecutive-epoch tracking counters after observations were removed."""
    by_t = sorted({o.t for o in gnss})
    index = {t: i for i, t in enumerate(by_t)}
    last: dict[int, tuple[int, int]] = {}
    out = []
    for o in gnss:
        e = index[o.t]
        prev = last.get(o.sat_id)
        count = prev[1] + 1 if prev is not None and prev[0] == e - 1 else 1
        last[o.sat_id] = (e, count)
        out.append(replace(o, track_count=count))
    return out


# --------------------------------------------------------------------- entry

def synthesize(traj: Trajectory, sc: Scenario, calib: Calibration | None = None,
               rngs: dict | None = None) -> Dataset:
    """Clean sensor streams plus ground truth at the camera rate."""
    calib = calib or Calibration()
    rngs = rngs or _rngs(sc.seed)
    imu = synth_imu(traj, sc, calib, rngs["imu"])
    wheel = synth_wheel(traj, sc, calib, rngs["wheel"])
    lm_rng = rngs["landmarks"]
    landmarks = place_landmarks(traj, sc, lm_rng)
    dyn_vel = np.zeros_like(landmarks)
    dyn_ids = np.zeros(0, dtype=int)
    dyn_events = [ev for ev in sc.anomalies if ev.type is AnomalyType.DYNAMIC_FEATURES]
    if dyn_events and len(landmarks):
        n_dyn = int(round(sc.dynamic_fraction * len(landmarks)))
        dyn_ids = np.sort(lm_rng.choice(len(landmarks), n_dyn, replace=False))
        speed = dyn_events[0].magnitude if dyn_events[0].magnitude > 0 else DYNAMIC_SPEED
        ang = lm_rng.uniform(0.0, 2.0 * np.pi, n_dyn)
        dyn_vel[dyn_ids] = speed * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(n_dyn)])
    frames = synth_features(traj, sc, calib, landmarks, dyn_vel, rngs["features"])
    gnss = synth_gnss(traj, sc, rngs["gnss"])
    tc = sample_times(sc.rates.camera, sc.duration)
    st = traj(tc)
    gt = TumTrajectory(tc, st.p, np.array([rot_to_quat(R) for R in st.R]))
    return Dataset(calib, imu, wheel, frames, gnss, gt, [], dyn_ids)


def simulate(sc: Scenario, calib: Calibration | None = None) -> tuple[Dataset, dict]:
    """Ground truth, clean synthesis and anomaly injection in one call."""
    rngs = _rngs(sc.seed)
    traj = generate_truth(sc)
    ds = synthesize(traj, sc, calib, rngs)
    return inject(ds, sc.anomalies, rngs["inject"], sc.noise.pixel_sigma)
