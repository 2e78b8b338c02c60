"""Sliding-window bookkeeping: frames, edges, features, GNSS epochs, prior."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..anomaly import DepthStatus
from ..dataset import FeatureFrame
from ..geometry import Calibration, Pose
from ..preintegration import PreintegratedImu, PreintegratedWheel
from .factors import (ClockFactor, DopplerFactor, ImuFactor, PriorFactor, PseudorangeFactor,
                      VisualBatch, WheelFactor)
from .marginalization import drop_from_prior, marginalize
from .state import nav_pose


@dataclass
class FrameSlot:
    fid: int
    t: float
    image: FeatureFrame
    keyframe: bool = True
    zupt: bool = False

    @property
    def key(self):
        return ("x", self.fid)


@dataclass
class Edge:
    """Preintegrated motion between two consecutive window frames."""

    imu: PreintegratedImu
    wheel: PreintegratedWheel | None
    wheel_ok: bool = True


@dataclass
class Feature:
    id: int
    obs: dict = field(default_factory=dict)     # frame fid -> (uv, measured depth or NaN)
    status: DepthStatus | None = None
    depth: float = float("nan")                 # fixed host depth
    free: bool = False                          # depth lives in values[("d", id)]
    validated: bool = False

    @property
    def host(self):
        return next(iter(self.obs)) if self.obs else None

    @property
    def key(self):
        return ("d", self.id)


@dataclass
class AttachedEpoch:
    t: float
    frame: int                 # fid of the state the receiver is propagated from
    clk: tuple
    obs: list


class SlidingWindow:
    def __init__(self, calib: Calibration):
        self.calib = calib
        self.frames: list[FrameSlot] = []
        self.edges: list[Edge] = []
        self.features: dict[int, Feature] = {}
        self.blacklist: set = set()
        self.values: dict = {}
        self.prior: PriorFactor | None = None
        self.epochs: list[AttachedEpoch] = []
        self.clock_links: list = []             # (clk_a, clk_b, dt)
        self.clock_sigma = 0.2
        self.last_clock = None                  # (key, t) of the newest clock state
        self.gnss_ready = False

    # ----------------------------------------------------------- queries

    def __len__(self):
        return len(self.frames)

    def slot(self, fid) -> FrameSlot:
        for s in self.frames:
            if s.fid == fid:
                return s
        raise KeyError(fid)

    def pose(self, fid) -> Pose:
        return nav_pose(self.values[("x", fid)])

    def keyframe_count(self) -> int:
        return sum(1 for s in self.frames if s.keyframe)

    def host_depth(self, feat: Feature) -> float:
        return float(self.values[feat.key][0]) if feat.free else feat.depth

    def usable(self, feat: Feature) -> bool:
        if feat.id in self.blacklist or len(feat.obs) < 2:
            return False
        return feat.free or np.isfinite(feat.depth)

    def world_point(self, feat: Feature) -> np.ndarray:
        uv, _ = feat.obs[feat.host]
        cam = self.pose(feat.host).compose(self.calib.extrinsic_cam_to_body)
        return cam.apply(np.r_[uv, 1.0] * self.host_depth(feat))

    # ---------------------------------------------------------- updates

    def add_frame(self, slot: FrameSlot, state, edge: Edge | None):
        if self.frames:
            if slot.t <= self.frames[-1].t:
                raise ValueError("window timestamps must increase")
            self.edges.append(edge)
        self.frames.append(slot)
        self.values[slot.key] = np.asarray(state, dtype=float).copy()
        img = slot.image
        for k, fid in enumerate(img.ids):
            fid = int(fid)
            if fid in self.blacklist:
                continue
            feat = self.features.setdefault(fid, Feature(fid))
            feat.obs[slot.fid] = (img.uv[k].copy(), float(img.depth[k]))
            if len(feat.obs) == 1:
                feat.depth = float(img.depth[k])
                feat.free = False
                feat.validated = False
                feat.status = None

    def blacklist_features(self, ids):
        for fid in ids:
            fid = int(fid)
            self.blacklist.add(fid)
            feat = self.features.pop(fid, None)
            if feat is not None and feat.free:
                self._drop_variable(feat.key)

    def _drop_variable(self, key):
        if self.prior is not None and key in self.prior.keys:
            self.prior = drop_from_prior(self.prior, self.values, [key])
        self.values.pop(key, None)

    def set_free_depth(self, feat: Feature, depth: float):
        feat.free = True
        self.values[feat.key] = np.array([float(depth)])

    def _rehost(self, feat: Feature, removed_fid: int):
        """Drop the observation in ``removed_fid``; move the depth to the next
        host if the removed frame was the host. Returns the old depth key if a
        free depth must be eliminated."""
        old_host = feat.host
        if removed_fid not in feat.obs:
            return None
        if old_host != removed_fid:
            del feat.obs[removed_fid]
            return None
        Pw = self.world_point(feat) if (feat.free or np.isfinite(feat.depth)) else None
        del feat.obs[removed_fid]
        if not feat.obs:
            return feat.key if feat.free else None
        new_host = feat.host
        uv, measured = feat.obs[new_host]
        transferred = np.nan
        if Pw is not None:
            cam = self.pose(new_host).compose(self.calib.extrinsic_cam_to_body)
            transferred = float(cam.inverse().apply(Pw)[2])
        if feat.status is DepthStatus.FIXED_FROM_SENSOR and np.isfinite(measured):
            feat.depth = measured
            return None
        if not feat.free and feat.status is None and np.isfinite(measured):
            feat.depth = measured           # still waiting for validation
            return None
        if np.isfinite(transferred) and transferred > 0.05:
            if feat.free:
                self.values[feat.key] = np.array([transferred])
                return "rehosted"
            feat.depth = transferred
            return None
        was_free = feat.free
        feat.depth = measured
        feat.free = False
        feat.validated = False
        feat.status = None
        return feat.key if was_free else None

    # ---------------------------------------------------------- factors

    def visual_factor(self, host_filter=None):
        """One batch with every usable feature; ``host_filter`` keeps only
        features hosted in the given frame."""
        hk, tk, uh, ut, dk, dd, ids = [], [], [], [], [], [], []
        for feat in self.features.values():
            if not self.usable(feat):
                continue
            host = feat.host
            if host_filter is not None and host != host_filter:
                continue
            uv_h, _ = feat.obs[host]
            for fid, (uv, _) in feat.obs.items():
                if fid == host:
                    continue
                hk.append(("x", host))
                tk.append(("x", fid))
                uh.append(uv_h)
                ut.append(uv)
                dk.append(feat.key if feat.free else None)
                dd.append(0.0 if feat.free else feat.depth)
                ids.append(feat.id)
        if not hk:
            return None
        return VisualBatch(hk, tk, np.array(uh), np.array(ut), self.calib.extrinsic_cam_to_body,
                           self.calib.feature_sigma, dk, np.array(dd), np.array(ids))

    def motion_factors(self, edge_index, use_wheel=True):
        a, b = self.frames[edge_index], self.frames[edge_index + 1]
        e = self.edges[edge_index]
        out = [ImuFactor(a.key, b.key, e.imu, self.calib.gravity_vector)]
        if use_wheel and e.wheel is not None and e.wheel_ok:
            out.append(WheelFactor(a.key, b.key, e.wheel, self.calib.extrinsic_wheel_to_body))
        return out

    def gnss_factors(self, epochs=None):
        out = []
        epochs = self.epochs if epochs is None else epochs
        for ep in epochs:
            t_state = self.slot(ep.frame).t
            for o in ep.obs:
                out.append(PseudorangeFactor(("x", ep.frame), t_state, o, ep.clk))
                out.append(DopplerFactor(("x", ep.frame), t_state, o))
        return out

    def clock_factors(self, links=None):
        links = self.clock_links if links is None else links
        return [ClockFactor(a, b, dt, self.clock_sigma) for a, b, dt in links]

    def build_factors(self, use_wheel=True, vision=True):
        fs = []
        if self.prior is not None:
            fs.append(self.prior)
        for i in range(len(self.edges)):
            fs += self.motion_factors(i, use_wheel)
        if vision:
            vf = self.visual_factor()
            if vf is not None:
                fs.append(vf)
        fs += self.gnss_factors()
        fs += self.clock_factors()
        return fs

    # ------------------------------------------------------ GNSS epochs

    def attach_epoch(self, t: float, obs: list):
        """Attach an epoch to the nearest window frame; returns its clock key."""
        nearest = min(self.frames, key=lambda s: abs(s.t - t))
        clk = ("clk", float(t))
        self.epochs.append(AttachedEpoch(t, nearest.fid, clk, list(obs)))
        if self.last_clock is not None and self.last_clock[0] in self.values:
            self.clock_links.append((self.last_clock[0], clk, t - self.last_clock[1]))
        self.last_clock = (clk, float(t))
        return clk

    # ------------------------------------------------- removal of frames

    def remove_pending(self, new_edge: Edge) -> Edge:
        """Remove the newest (non-keyframe) frame and merge its incoming edge
        with ``new_edge``. Returns the merged edge."""
        slot = self.frames[-1]
        merged = new_edge
        if self.edges:
            e_in = self.edges[-1]
            ok = (e_in.wheel_ok and new_edge.wheel_ok and e_in.wheel is not None
                  and new_edge.wheel is not None)
            merged = Edge(e_in.imu.merge(new_edge.imu),
                          e_in.wheel.merge(new_edge.wheel) if ok else None, ok)
        for ep in self.epochs:
            if ep.frame == slot.fid:
                ep.frame = self.frames[-2].fid
        for feat in list(self.features.values()):
            res = self._rehost(feat, slot.fid)
            if res not in (None, "rehosted"):
                self._drop_variable(res)
            if not feat.obs:
                self.features.pop(feat.id)
        self._drop_variable(slot.key)
        self.frames.pop()
        if self.edges:
            self.edges.pop()
        return merged

    def reattach_to_nearest(self):
        for ep in self.epochs:
            ep.frame = min(self.frames, key=lambda s: abs(s.t - ep.t)).fid

    def marginalize_oldest(self, floor: float = 1e-12, huber_delta: float = 1.0):
        """Schur-complement the oldest frame, its hosted free depths and its
        GNSS clock states into the prior."""
        old = self.frames[0]
        marg = [old.key]
        fs = []
        if self.prior is not None:
            fs.append(self.prior)
        if self.edges:
            fs += self.motion_factors(0)
        vf = self.visual_factor(host_filter=old.fid)
        if vf is not None:
            fs.append(vf)
        hosted = [f for f in self.features.values() if f.host == old.fid and f.free
                  and self.usable(f)]
        marg += [f.key for f in hosted]
        old_epochs = [ep for ep in self.epochs if ep.frame == old.fid]
        fs += self.gnss_factors(old_epochs)
        newest_clk = self.last_clock[0] if self.last_clock else None
        attached = {ep.clk for ep in self.epochs if ep.frame != old.fid}
        marg_clk = {ep.clk for ep in old_epochs if ep.clk != newest_clk}
        # clock states whose frames are gone already survive only through the chain
        marg_clk |= {k for k in self.values if k[0] == "clk" and k not in attached
                     and k != newest_clk}
        links = [ln for ln in self.clock_links if ln[0] in marg_clk or ln[1] in marg_clk]
        fs += self.clock_factors(links)
        marg += sorted(marg_clk)
        new_prior = marginalize(fs, self.values, marg, floor, huber_delta)
        self.prior = new_prior
        self.clock_links = [ln for ln in self.clock_links if ln not in links]
        self.epochs = [ep for ep in self.epochs if ep.frame != old.fid]
        for k in marg_clk:
            self.values.pop(k, None)
        # drop the frame and move features to their next observation
        for feat in list(self.features.values()):
            res = self._rehost(feat, old.fid)
            if res not in (None, "rehosted"):
                self.values.pop(res, None)
            if not feat.obs:
                self.features.pop(feat.id)
        self.values.pop(old.key, None)
        self.frames.pop(0)
        if self.edges:
            self.edges.pop(0)
        self._drop_dead_prior_keys()

    def _drop_dead_prior_keys(self):
        if self.prior is None:
            return
        dead = [k for k in self.prior.keys if k not in self.values]
        if dead:
            self.prior = drop_from_prior(self.prior, {**self.prior.origin, **self.values}, dead)
