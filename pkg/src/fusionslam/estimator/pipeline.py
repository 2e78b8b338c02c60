"""Frame-by-frame estimator driving the sliding window."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..anomaly import (DepthStatus, detect_wheel_anomaly, depth_validate, flow_back_filter,
                       FeatureTrack, gnss_filter, low_speed_gate, mcc_filter,
                       substitute_gyro_yaw_stream)
from ..dataset import Dataset, SensorBundle, TumTrajectory
from ..errors import (FusionError, InsufficientSamples, LowParallax, NonPositiveDepth,
                      SolverDiverged, SpanMismatch)
from ..geometry import Calibration, Pose, quat_multiply, quat_normalize, rot_z
from ..gnss import range_minus
from ..initialization import InitMethod, InitResult, InitWindow, init_global, initialize
from ..motion import glrt, stationary_vote, visual_parallax
from ..preintegration import (ImuData, PreintegratedImu, imu_preintegrate,
                              wheel_displacement_norm, wheel_preintegrate)
from .config import EstimatorConfig
from .factors import PriorFactor
from .solver import solve
from .state import BA, BG, DP, DTH, DV, NAV_DIM, P, Q, V, nav_rotation, nav_vector
from .triangulation import KeyframeChoice, keyframe_decision, rms_parallax, triangulate
from .window import Edge, FrameSlot, SlidingWindow

DIAGNOSTIC_COLUMNS = (
    "t", "frame", "initialized", "init_method", "zupt", "wheel_anomaly", "wheel_factor_added",
    "n_imu", "n_wheel", "n_visual", "n_pseudorange", "n_doppler", "n_prior", "speed",
    "gnss_epochs", "gnss_gated", "gnss_pr_new", "gnss_dop_new", "n_dynamic_flagged",
    "iterations", "cost",
)

MAX_FAILED_SOLVES = 5


@dataclass
class FrameOutput:
    t: float
    pose: Pose
    velocity: np.ndarray


def _zupt_mask():
    m = np.zeros(NAV_DIM, bool)
    m[DP] = m[DTH] = m[DV] = True
    return m


class Estimator:
    """Tightly coupled IMU / wheel / RGB-D / GNSS sliding-window estimator.

    Feed :class:`SensorBundle` objects in time order to :meth:`process_frame`;
    each call returns the poses that became available (several at
    initialization, one per frame afterwards).
    """

    def __init__(self, calib: Calibration, config: EstimatorConfig = EstimatorConfig()):
        self.calib = calib
        self.config = config
        self.window = SlidingWindow(calib)
        self.window.clock_sigma = config.gnss.clock_walk_sigma
        self.global_prior: PriorFactor | None = None
        self.initialized = False
        self.init_result: InitResult | None = None
        self.buffer: list[SensorBundle] = []
        self.t_first: float | None = None
        self.recent_imu: ImuData | None = None
        self.recent_images: deque = deque()     # (t, FeatureFrame) inside the ZUPT horizon
        self.history: list = []                 # (t, p, v) of every output frame
        self.stored_epochs: list = []
        self.diagnostics: list[dict] = []
        self.flagged_dynamic: set = set()
        self.mcc_checked: dict = {}      # feature id -> largest residual seen
        self.failed_solves = 0
        self.R_ob = calib.extrinsic_wheel_to_body.R.T

    # ---------------------------------------------------------------- util

    def _preint_imu(self, data, ba, bg) -> PreintegratedImu:
        c = self.calib
        return imu_preintegrate(data, ba, bg, c.sigma_acc, c.sigma_gyro, c.acc_bias_walk,
                                c.gyro_bias_walk)

    def _preint_wheel(self, data):
        try:
            return wheel_preintegrate(data, self.calib.wheel_sigma_v, self.calib.wheel_sigma_w)
        except InsufficientSamples:
            return None

    def _remember_imu(self, data: ImuData):
        self.recent_imu = data if self.recent_imu is None else self.recent_imu.concat(data)
        keep = self.recent_imu.t >= self.recent_imu.t[-1] - self.config.window.zupt_imu_window - 1e-9
        self.recent_imu = ImuData(self.recent_imu.t[keep], self.recent_imu.acc[keep],
                                  self.recent_imu.gyro[keep])

    def _row(self, bundle, **kw) -> dict:
        row = dict.fromkeys(DIAGNOSTIC_COLUMNS, 0)
        row.update(t=bundle.t, frame=int(bundle.frame.frame_id), init_method="",
                   initialized=int(self.initialized), cost=0.0, speed=0.0)
        if self.init_result is not None:
            row["init_method"] = self.init_result.method.value
        row.update(kw)
        self.diagnostics.append(row)
        return row

    def _store_epochs(self, bundle):
        for ep in bundle.gnss:
            kept = gnss_filter(ep, self.config.gnss_filter)
            if kept:
                self.stored_epochs.append(kept)

    # ------------------------------------------------------ initialization

    def _init_window(self) -> InitWindow:
        bs = self.buffer
        times = np.array([b.t for b in bs])
        imu = [self._preint_imu(b.imu, None, None) for b in bs[1:]]
        wheel = [self._preint_wheel(b.wheel) for b in bs[1:]]
        imu_data, wheel_data = bs[1].imu, bs[1].wheel
        for b in bs[2:]:
            imu_data = imu_data.concat(b.imu)
            wheel_data = wheel_data.concat(b.wheel)
        return InitWindow(times, [b.frame for b in bs], imu, wheel, imu_data, wheel_data)

    def _try_initialize(self, bundle) -> list[FrameOutput]:
        if self.t_first is None:
            self.t_first = bundle.t
        self.buffer.append(bundle)
        self.buffer = self.buffer[-self.config.window.init_frames:]
        self._remember_imu(bundle.imu)
        if len(self.buffer) < self.config.window.init_frames:
            self._row(bundle)
            return []
        try:
            win = self._init_window()
            if any(w is None for w in win.wheel):
                raise InsufficientSamples("wheel gap inside the initialization window")
            res = initialize(win, self.config.motion, self.calib, self.t_first)
        except FusionError:
            self._row(bundle)
            return []
        return self._start(res)

    def _start(self, res: InitResult) -> list[FrameOutput]:
        cfg = self.config
        w = self.window
        ba = np.asarray(res.acc_bias, dtype=float)
        bg = np.asarray(res.gyro_bias, dtype=float)
        zupt = res.method is InitMethod.STATIONARY
        for i, b in enumerate(self.buffer):
            x = nav_vector(res.positions[i], res.rotations[i], res.velocities[i], ba, bg)
            edge = None
            if i > 0:
                wheel = substitute_gyro_yaw_stream(b.wheel, b.imu, bg, self.R_ob)
                edge = Edge(self._preint_imu(b.imu, ba, bg), self._preint_wheel(wheel))
                edge.wheel_ok = edge.wheel is not None
            w.add_frame(FrameSlot(int(b.frame.frame_id), b.t, b.frame, True, zupt), x, edge)
        pr = cfg.prior
        first = w.frames[0]
        sig = np.r_[np.full(3, pr.position), pr.tilt, pr.tilt, pr.yaw, np.full(3, pr.velocity),
                    np.full(3, pr.bias_acc), np.full(3, pr.bias_gyro)]
        w.prior = PriorFactor.gaussian(first.key, w.values[first.key], sig)
        self.initialized = True
        self.init_result = res
        for b in self.buffer:
            self._store_epochs(b)
        if cfg.vision.enabled:
            self._validate_depths()
        it, cost = self._solve(use_wheel=True)
        outs = []
        for b, s in zip(self.buffer, w.frames):
            x = w.values[s.key]
            outs.append(FrameOutput(s.t, Pose(x[Q], x[P]), x[V].copy()))
            self.history.append((s.t, x[P].copy(), x[V].copy()))
        last = self.buffer[-1]
        self._row(last, initialized=1, zupt=int(zupt), iterations=it, cost=cost,
                  **self._factor_counts(True))
        self.buffer = []
        return outs

    # -------------------------------------------------------------- solve

    def _factor_counts(self, use_wheel: bool) -> dict:
        w = self.window
        n_vis = 0
        vf = w.visual_factor() if self.config.vision.enabled else None
        if vf is not None:
            n_vis = len(vf)
        n_wheel = sum(1 for e in w.edges if use_wheel and e.wheel is not None and e.wheel_ok)
        n_gnss = sum(len(ep.obs) for ep in w.epochs)
        return dict(n_imu=len(w.edges), n_wheel=n_wheel, n_visual=n_vis, n_pseudorange=n_gnss,
                    n_doppler=n_gnss, n_prior=int(w.prior is not None))

    def _solve(self, use_wheel: bool):
        w = self.window
        factors = w.build_factors(use_wheel=use_wheel, vision=self.config.vision.enabled)
        if self.global_prior is not None:
            factors.append(self.global_prior)
        fixed = {s.key: _zupt_mask() for s in w.frames if s.zupt}
        try:
            values, rep = solve(factors, w.values, fixed, self.config.solver)
        except SolverDiverged:
            self.failed_solves += 1
            if self.failed_solves >= MAX_FAILED_SOLVES:
                raise
            return -1, float("nan")
        if not all(np.all(np.isfinite(v)) for v in values.values()):
            raise SolverDiverged("non-finite state after solve")
        self.failed_solves = 0
        lim_a, lim_g = self.config.window.bias_acc_limit, self.config.window.bias_gyro_limit
        for s in w.frames:
            x = values[s.key]
            x[BA] = np.clip(x[BA], -lim_a, lim_a)
            x[BG] = np.clip(x[BG], -lim_g, lim_g)
        w.values = values
        lo, hi = self.config.vision.free_depth_range
        bad = [f.id for f in w.features.values()
               if f.free and not lo <= values[f.key][0] <= hi]
        w.blacklist_features(bad)
        return rep.iterations, rep.final_cost

    # ------------------------------------------------------------ helpers

    def _predict(self, xN, pre: PreintegratedImu):
        g = self.calib.gravity_vector
        R = nav_rotation(xN)
        dt = pre.dt
        x = xN.copy()
        x[P] = xN[P] + xN[V] * dt + 0.5 * g * dt * dt + R @ pre.alpha
        x[V] = xN[V] + g * dt + R @ pre.beta
        x[Q] = quat_normalize(quat_multiply(xN[Q], pre.gamma))
        return x

    def _wheel_pose(self, xN, wheel_pre) -> Pose:
        Tbo = self.calib.extrinsic_wheel_to_body
        odo_N = Pose(xN[Q], xN[P]).compose(Tbo)
        odo_M = odo_N.compose(Pose(wheel_pre.delta_q, wheel_pre.delta_p))
        return odo_M.compose(Tbo.inverse())

    def _remember_image(self, t: float, image):
        self.recent_images.append((t, image))
        horizon = t - self.config.window.zupt_imu_window - 1e-9
        while self.recent_images[0][0] < horizon:
            self.recent_images.popleft()

    def _zupt_parallax(self, image) -> float:
        """Mean squared displacement between the latest image and the oldest
        image inside the ZUPT horizon."""
        if len(self.recent_images) < 2:
            return np.inf
        ref = self.recent_images[0][1]
        if len(image) == 0 or len(ref) == 0:
            return np.inf
        common, ia, ib = np.intersect1d(ref.ids, image.ids, return_indices=True)
        if len(common) == 0:
            return np.inf
        return visual_parallax([(ref.uv[ia], image.uv[ib])])

    def _mcc(self, newest_pose: Pose) -> np.ndarray:
        w = self.window
        slots = {s.fid: i for i, s in enumerate(w.frames)}
        poses = [w.pose(s.fid) for s in w.frames[:-1]] + [newest_pose]
        tracks = {}
        for feat in w.features.values():
            if len(feat.obs) < 2:
                continue
            fr = [slots[f] for f in feat.obs]
            uv = np.array([o[0] for o in feat.obs.values()])
            d = np.array([o[1] for o in feat.obs.values()])
            tracks[feat.id] = FeatureTrack(fr, uv, d)
        flagged, residuals = mcc_filter(tracks, poses, self.calib.extrinsic_cam_to_body,
                                        self.config.vision.mcc_threshold)
        for fid, r in residuals.items():
            self.mcc_checked[fid] = max(r, self.mcc_checked.get(fid, 0.0))
        return flagged

    def _validate_depths(self):
        w = self.window
        ext = self.calib.extrinsic_cam_to_body
        for feat in w.features.values():
            if feat.validated or len(feat.obs) < 2 or feat.id in w.blacklist:
                continue
            host_uv, measured = feat.obs[feat.host]
            poses = [w.pose(f) for f in feat.obs]
            uvs = [o[0] for o in feat.obs.values()]
            try:
                d_tri = triangulate(poses, uvs, ext, self.config.vision.validation_angle)
            except (LowParallax, NonPositiveDepth):
                continue            # sensor depth (if any) stays in use until parallax builds up
            status, depth = depth_validate(measured if np.isfinite(measured) else None, d_tri,
                                           self.calib.depth_range, self.config.vision.depth_agree)
            feat.status = status
            feat.validated = True
            if status is DepthStatus.FIXED_FROM_SENSOR:
                feat.depth = depth
            else:
                w.set_free_depth(feat, depth)

    def _receiver_clock(self, x, t_state, t_epoch, obs) -> float:
        w = self.window
        yaw = float(w.values[("yaw",)][0])
        pe = w.values[("anchor",)] + rot_z(yaw) @ (x[P] + x[V] * (t_epoch - t_state))
        return float(np.mean([-range_minus(o.sat_pos, pe, o.pseudorange) for o in obs]))

    def _try_global_init(self):
        gc = self.config.gnss
        if not gc.enabled or self.window.gnss_ready or len(self.stored_epochs) < gc.global_min_epochs:
            return
        t = np.array([h[0] for h in self.history])
        p = np.array([h[1] for h in self.history])
        v = np.array([h[2] for h in self.history])
        try:
            gi = init_global(t, p, v, self.stored_epochs, gc.global_min_epochs, gc.global_min_length)
        except FusionError:
            return
        w = self.window
        w.values[("yaw",)] = np.array([gi.yaw])
        w.values[("anchor",)] = np.asarray(gi.anchor, dtype=float).copy()
        w.values[("drift",)] = np.array([gi.clock_drift])
        mean = {("yaw",): w.values[("yaw",)], ("anchor",): w.values[("anchor",)],
                ("drift",): w.values[("drift",)]}
        keys = list(mean)
        J = np.diag(np.r_[1.0 / gc.yaw_sigma, np.full(3, 1.0 / gc.anchor_sigma), 1.0 / gc.drift_sigma])
        self.global_prior = PriorFactor(keys, mean, J, np.zeros(5))
        w.gnss_ready = True

    # ------------------------------------------------------------ main

    def process_frame(self, bundle: SensorBundle) -> list[FrameOutput]:
        self._remember_image(bundle.t, bundle.frame)
        if not self.initialized:
            return self._try_initialize(bundle)
        cfg = self.config
        w = self.window
        g = self.calib.gravity_vector
        N = w.frames[-1]
        xN = w.values[N.key].copy()
        ba, bg = xN[BA], xN[BG]

        # measurement preparation
        wheel_data = substitute_gyro_yaw_stream(bundle.wheel, bundle.imu, bg, self.R_ob)
        imu_pre = self._preint_imu(bundle.imu, ba, bg)
        wheel_pre = self._preint_wheel(wheel_data)
        x_pred = self._predict(xN, imu_pre)
        self._remember_imu(bundle.imu)

        anomalous = wheel_pre is None
        if not anomalous:
            try:
                anomalous = detect_wheel_anomaly(imu_pre, nav_rotation(xN), xN[V], g, wheel_pre,
                                                 cfg.wheel)
            except SpanMismatch:
                anomalous = True

        # stationary vote
        G = glrt(self.recent_imu, self.calib.sigma_acc, self.calib.sigma_gyro, self.calib.gravity)
        W = np.inf if anomalous else wheel_displacement_norm(wheel_pre)
        Vp = self._zupt_parallax(bundle.frame)
        zupt = stationary_vote(G, W, Vp, cfg.motion)

        edge = Edge(imu_pre, wheel_pre, not anomalous)
        if not N.keyframe and len(w.frames) > 1:
            edge = w.remove_pending(edge)
        if zupt:
            x_new = xN.copy()
            x_new[V] = 0.0
        else:
            x_new = x_pred
        slot = FrameSlot(int(bundle.frame.frame_id), bundle.t, bundle.frame, True, zupt)
        w.add_frame(slot, x_new, edge)
        w.reattach_to_nearest()

        # vision guards
        n_flagged = 0
        if cfg.vision.enabled:
            prev = w.frames[-2].image
            common, ia, _ = np.intersect1d(prev.ids, bundle.frame.ids, return_indices=True)
            fwd = {int(i): prev.uv[k] for i, k in zip(common, ia)}
            # the simulated front end associates perfectly, so backward tracks agree
            kept = set(flow_back_filter(fwd, dict(fwd), cfg.vision.flow_back_threshold).tolist())
            w.blacklist_features([i for i in common if int(i) not in kept])
            if cfg.vision.mcc_enabled:
                newest = (Pose(x_pred[Q], x_pred[P]) if anomalous or zupt
                          else self._wheel_pose(xN, wheel_pre))
                if zupt:
                    newest = Pose(x_new[Q], x_new[P])
                flagged = self._mcc(newest)
                n_flagged = len(flagged)
                self.flagged_dynamic.update(int(i) for i in flagged)
                w.blacklist_features(flagged)
            self._validate_depths()

        # GNSS
        n_pr = n_gated = 0
        speed = float(np.linalg.norm(x_new[V]))
        for ep in bundle.gnss:
            kept = gnss_filter(ep, cfg.gnss_filter)
            if not w.gnss_ready:
                if kept:
                    self.stored_epochs.append(kept)
                continue
            te = ep[0].t if ep else bundle.t
            frac = (te - N.t) / max(bundle.t - N.t, 1e-9)
            speed = float(np.linalg.norm((1 - frac) * xN[V] + frac * x_new[V]))
            if zupt or low_speed_gate(speed, cfg.gnss_filter.v_ths):
                n_gated += 1
                continue
            if not kept:
                continue
            clk = w.attach_epoch(te, kept)
            ep_frame = w.epochs[-1].frame
            xs = w.values[("x", ep_frame)]
            w.values[clk] = np.array([self._receiver_clock(xs, w.slot(ep_frame).t, te, kept)])
            n_pr += len(kept)

        # solve
        it, cost = self._solve(use_wheel=not anomalous)
        xM = w.values[slot.key]
        out = FrameOutput(slot.t, Pose(xM[Q].copy(), xM[P].copy()), xM[V].copy())
        counts = self._factor_counts(not anomalous)

        # keyframe decision
        last_kf = w.frames[-2]
        prev_img, img = last_kf.image, bundle.frame
        common, ia, ib = np.intersect1d(prev_img.ids, img.ids, return_indices=True)
        if len(img) and not len(common):
            par = np.inf
        else:
            par = rms_parallax(prev_img.uv[ia], img.uv[ib])
        choice = keyframe_decision(par, slot.t - last_kf.t, cfg.window.keyframe_parallax,
                                   cfg.window.keyframe_gap)
        slot.keyframe = choice is KeyframeChoice.KEYFRAME
        if slot.keyframe and w.keyframe_count() > cfg.window.size:
            w.marginalize_oldest(cfg.solver.eigen_floor, cfg.solver.huber_delta)

        self.history.append((out.t, out.pose.translation.copy(), out.velocity.copy()))
        self._try_global_init()
        self._row(bundle, zupt=int(zupt), wheel_anomaly=int(anomalous),
                  wheel_factor_added=int(not anomalous and edge.wheel is not None),
                  speed=speed, gnss_epochs=len(bundle.gnss), gnss_gated=n_gated,
                  gnss_pr_new=n_pr, gnss_dop_new=n_pr, n_dynamic_flagged=n_flagged,
                  iterations=it, cost=cost, **counts)
        return [out]


def run_dataset(ds: Dataset, config: EstimatorConfig = EstimatorConfig()):
    """Run the estimator over a dataset; returns ``(TumTrajectory, estimator)``."""
    est = Estimator(ds.calibration, config)
    outs: list[FrameOutput] = []
    for bundle in ds.bundles():
        outs += est.process_frame(bundle)
    if not outs:
        traj = TumTrajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    else:
        traj = TumTrajectory(np.array([o.t for o in outs]), np.array([o.pose.translation for o in outs]),
                             np.array([o.pose.rotation for o in outs]))
    return traj, est
