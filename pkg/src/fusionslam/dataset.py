"""In-memory dataset, per-frame sensor bundles and the on-disk format.

Directory layout::

    imu.csv          t,ax,ay,az,gx,gy,gz
    wheel.csv        t,vx,vy,wz
    features.csv     t,frame_id,feature_id,u,v,depth_or_-1   (pixels)
    gnss.csv         t,sat_id,sx,sy,sz,svx,svy,svz,pr,pr_sigma,dop,dop_sigma,elev,track_count
    groundtruth.tum  t tx ty tz qx qy qz qw
    anomalies.csv    t_start,t_end,type
    calib.cfg

Feature coordinates are normalized in memory and pixels on disk.
"""
from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import format_section, read_sections, update_dataclass
from .errors import ConfigError, DatasetFormatError
from .geometry import Calibration, Intrinsics, Pose, quat_normalize
from .gnss import GnssObservation
from .preintegration import ImuData, WheelData
from .simulation.scenario import AnomalyEvent, AnomalyType

IMU_HEADER = "t,ax,ay,az,gx,gy,gz"
WHEEL_HEADER = "t,vx,vy,wz"
FEATURE_HEADER = "t,frame_id,feature_id,u,v,depth_or_-1"
GNSS_HEADER = "t,sat_id,sx,sy,sz,svx,svy,svz,pr,pr_sigma,dop,dop_sigma,elev,track_count"
ANOMALY_HEADER = "t_start,t_end,type"
DYNAMIC_HEADER = "feature_id"


@dataclass
class FeatureFrame:
    """Feature observations of one image; ``depth`` is NaN where missing."""

    t: float
    frame_id: int
    ids: np.ndarray
    uv: np.ndarray
    depth: np.ndarray

    def __len__(self):
        return len(self.ids)

    @classmethod
    def empty(cls, t: float, frame_id: int) -> "FeatureFrame":
        return cls(t, frame_id, np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0))

    def subset(self, mask) -> "FeatureFrame":
        return FeatureFrame(self.t, self.frame_id, self.ids[mask], self.uv[mask], self.depth[mask])


@dataclass
class TumTrajectory:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray   # (n, 4) scalar-first

    def __len__(self):
        return len(self.t)

    def poses(self) -> list[Pose]:
        return [Pose(q, p) for p, q in zip(self.p, self.q)]


@dataclass
class SensorBundle:
    """Measurements between the previous image (exclusive) and this one."""

    t_prev: float | None
    t: float
    imu: ImuData
    wheel: WheelData
    frame: FeatureFrame
    gnss: list = field(default_factory=list)    # list of epochs, each a list of observations


@dataclass
class Dataset:
    calibration: Calibration
    imu: ImuData
    wheel: WheelData
    frames: list
    gnss: list                         # flat list of GnssObservation, time ordered
    groundtruth: TumTrajectory
    anomalies: list = field(default_factory=list)
    dynamic_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def gnss_epochs(self) -> list[list[GnssObservation]]:
        epochs: dict[float, list] = {}
        for obs in self.gnss:
            epochs.setdefault(obs.t, []).append(obs)
        return [epochs[t] for t in sorted(epochs)]

    def bundles(self):
        """Yield one :class:`SensorBundle` per image frame."""
        epochs = self.gnss_epochs()
        e = 0
        prev = None
        for frame in self.frames:
            t = frame.t
            batch = []
            while e < len(epochs) and epochs[e][0].t <= t + 1e-9:
                if prev is None or epochs[e][0].t > prev + 1e-9:
                    batch.append(epochs[e])
                e += 1
            if prev is None:
                imu = self.imu.between(t, t)
                wheel = self.wheel.between(t, t)
            else:
                imu = self.imu.between(prev, t)
                wheel = self.wheel.between(prev, t)
            yield SensorBundle(prev, t, imu, wheel, frame, batch)
            prev = t


def frame_labels(frame_times, anomalies, min_overlap: float = 0.5) -> dict:
    """Per-frame boolean labels for every anomaly type.

    Frame ``k`` is labelled when at least ``min_overlap`` of its interval
    ``(t_{k-1}, t_k]`` lies inside a scheduled interval of that type. The
    first frame uses a zero-length interval and is labelled by containment.
    """
    t = np.asarray(frame_times, dtype=float)
    labels = {kind: np.zeros(len(t), dtype=bool) for kind in AnomalyType}
    if len(t) == 0:
        return labels
    t0 = np.r_[t[0], t[:-1]]
    span = t - t0
    for ev in anomalies:
        overlap = np.clip(np.minimum(t, ev.t_end) - np.maximum(t0, ev.t_start), 0.0, None)
        hit = np.where(span > 0, overlap >= min_overlap * np.where(span > 0, span, 1.0),
                       (t >= ev.t_start) & (t < ev.t_end))
        labels[ev.type] |= hit
    return labels


# ------------------------------------------------------------------ writing

def atomic_write(path, data) -> None:
    """Write text or bytes to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header: str, rows: np.ndarray, fmt) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    if len(rows):
        np.savetxt(buf, rows, fmt=fmt, delimiter=",")
    return buf.getvalue()


_F = "%.17g"


def format_tum(traj: TumTrajectory) -> str:
    lines = []
    for t, p, q in zip(traj.t, traj.p, traj.q):
        vals = (t, p[0], p[1], p[2], q[1], q[2], q[3], q[0])
        lines.append(" ".join(f"{v:.9g}" for v in vals))
    return "\n".join(lines) + ("\n" if lines else "")


def write_tum(path, traj: TumTrajectory) -> None:
    atomic_write(path, format_tum(traj))


def format_calibration(calib: Calibration) -> str:
    ec, ew, k = calib.extrinsic_cam_to_body, calib.extrinsic_wheel_to_body, calib.intrinsics
    lines = ["[extrinsics]",
             "cam_to_body_q = " + " ".join(repr(float(x)) for x in ec.rotation),
             "cam_to_body_t = " + " ".join(repr(float(x)) for x in ec.translation),
             "wheel_to_body_q = " + " ".join(repr(float(x)) for x in ew.rotation),
             "wheel_to_body_t = " + " ".join(repr(float(x)) for x in ew.translation),
             ""]
    lines += format_section("intrinsics", k) + [""]
    noise = [f.name for f in fields(Calibration)
             if f.name not in ("extrinsic_cam_to_body", "extrinsic_wheel_to_body", "intrinsics")]
    lines.append("[sensors]")
    for name in noise:
        val = getattr(calib, name)
        text = " ".join(repr(float(x)) for x in val) if isinstance(val, tuple) else repr(val)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


def parse_calibration(text: str) -> Calibration:
    sections = read_sections(text)
    calib = Calibration()
    unknown = set(sections) - {"extrinsics", "intrinsics", "sensors"}
    if unknown:
        raise ConfigError(f"unknown calibration sections: {sorted(unknown)}")
    if "extrinsics" in sections:
        ex = dict(sections["extrinsics"])
        bad = set(ex) - {"cam_to_body_q", "cam_to_body_t", "wheel_to_body_q", "wheel_to_body_t"}
        if bad:
            raise ConfigError(f"unknown keys in [extrinsics]: {sorted(bad)}")

        def vec(key, default):
            if key not in ex:
                return default
            try:
                return np.array([float(x) for x in ex[key].split()])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}") from exc

        ec, ew = calib.extrinsic_cam_to_body, calib.extrinsic_wheel_to_body
        calib = replace(calib,
                        extrinsic_cam_to_body=Pose(vec("cam_to_body_q", ec.rotation),
                                                   vec("cam_to_body_t", ec.translation)),
                        extrinsic_wheel_to_body=Pose(vec("wheel_to_body_q", ew.rotation),
                                                     vec("wheel_to_body_t", ew.translation)))
    if "intrinsics" in sections:
        calib = replace(calib, intrinsics=update_dataclass(Intrinsics(), sections["intrinsics"],
                                                           "intrinsics"))
    if "sensors" in sections:
        items = dict(sections["sensors"])
        if any(k in items for k in ("extrinsic_cam_to_body", "extrinsic_wheel_to_body", "intrinsics")):
            raise ConfigError("poses and intrinsics belong to their own sections")
        calib = update_dataclass(calib, items, "sensors")
    return calib


def write_dataset(directory, ds: Dataset) -> None:
    d = Path(directory)
    K = ds.calibration.intrinsics
    atomic_write(d / "imu.csv", _csv(IMU_HEADER, np.column_stack([ds.imu.t, ds.imu.acc, ds.imu.gyro]), _F))
    atomic_write(d / "wheel.csv", _csv(WHEEL_HEADER, np.column_stack(
        [ds.wheel.t, ds.wheel.velocity[:, :2], ds.wheel.yaw_rate]), _F))
    rows = []
    for fr in ds.frames:
        if len(fr) == 0:
            continue
        px = K.to_pixels(fr.uv)
        depth = np.where(np.isnan(fr.depth), -1.0, fr.depth)
        rows.append(np.column_stack([np.full(len(fr), fr.t), np.full(len(fr), fr.frame_id),
                                     fr.ids, px, depth]))
    frows = np.vstack(rows) if rows else np.zeros((0, 6))
    atomic_write(d / "features.csv", _csv(FEATURE_HEADER, frows,
                                          [_F, "%d", "%d", _F, _F, _F]))
    grows = np.array([[o.t, o.sat_id, *o.sat_pos, *o.sat_vel, o.pseudorange, o.pseudorange_sigma,
                       o.doppler_range_rate, o.doppler_sigma, o.elevation, o.track_count]
                      for o in ds.gnss]).reshape(-1, 14)
    atomic_write(d / "gnss.csv", _csv(GNSS_HEADER, grows, [_F, "%d"] + [_F] * 11 + ["%d"]))
    write_tum(d / "groundtruth.tum", ds.groundtruth)
    lines = [ANOMALY_HEADER] + [f"{ev.t_start!r},{ev.t_end!r},{ev.type.value}" for ev in ds.anomalies]
    atomic_write(d / "anomalies.csv", "\n".join(lines) + "\n")
    atomic_write(d / "dynamic_features.csv",
                 "\n".join([DYNAMIC_HEADER] + [str(int(i)) for i in ds.dynamic_ids]) + "\n")
    atomic_write(d / "calib.cfg", format_calibration(ds.calibration))


# ------------------------------------------------------------------ reading

def _load_csv(path: Path, header: str, ncols: int) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            body = fh.read()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read {path}: {exc}") from exc
    if first != header:
        raise DatasetFormatError(f"{path.name}: expected header {header!r}, got {first!r}")
    if not body.strip():
        return np.zeros((0, ncols))
    try:
        arr = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DatasetFormatError(f"{path.name}: {exc}") from exc
    if arr.shape[1] != ncols:
        raise DatasetFormatError(f"{path.name}: expected {ncols} columns, got {arr.shape[1]}")
    return arr


def read_tum(path) -> TumTrajectory:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetFormatError(f"cannot read {path}: {exc}") from exc
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        arr = np.array(rows, dtype=float).reshape(-1, 8)
    except ValueError as exc:
        raise DatasetFormatError(f"{path.name}: malformed TUM line") from exc
    if len(arr) > 1 and np.any(np.diff(arr[:, 0]) <= 0):
        raise DatasetFormatError(f"{path.name}: timestamps must be strictly increasing")
    q = arr[:, [7, 4, 5, 6]]
    if len(q) and np.any(np.abs(np.linalg.norm(q, axis=1) - 1.0) > 1e-6):
        raise DatasetFormatError(f"{path.name}: quaternion not unit norm")
    q = np.array([quat_normalize(x) for x in q]).reshape(-1, 4)
    return TumTrajectory(arr[:, 0], arr[:, 1:4], q)


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetFormatError(f"dataset directory {d} does not exist")
    try:
        calib = parse_calibration((d / "calib.cfg").read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetFormatError(f"cannot read calib.cfg: {exc}") from exc
    imu = _load_csv(d / "imu.csv", IMU_HEADER, 7)
    wh = _load_csv(d / "wheel.csv", WHEEL_HEADER, 4)
    ft = _load_csv(d / "features.csv", FEATURE_HEADER, 6)
    gn = _load_csv(d / "gnss.csv", GNSS_HEADER, 14)
    gt = read_tum(d / "groundtruth.tum")

    K = calib.intrinsics
    frames = []
    by_frame: dict[int, list] = {}
    for row in ft:
        by_frame.setdefault(int(row[1]), []).append(row)
    # frame list follows the ground-truth timestamps so empty frames survive
    for fid, t in enumerate(gt.t):
        rows = by_frame.pop(fid, [])
        if rows:
            r = np.array(rows)
            depth = np.where(r[:, 5] < 0, np.nan, r[:, 5])
            frames.append(FeatureFrame(float(t), fid, r[:, 2].astype(int), K.to_normalized(r[:, 3:5]), depth))
        else:
            frames.append(FeatureFrame.empty(float(t), fid))
    if by_frame:
        raise DatasetFormatError("features.csv references frames without ground-truth time")

    gnss = [GnssObservation(float(r[0]), int(r[1]), r[2:5].copy(), r[5:8].copy(), float(r[8]),
                            float(r[9]), float(r[10]), float(r[11]), float(r[12]), int(r[13]))
            for r in gn]
    anomalies = []
    try:
        lines = (d / "anomalies.csv").read_text(encoding="utf-8").splitlines()
    except OSError:
        lines = [ANOMALY_HEADER]
    for ln in lines[1:]:
        if ln.strip():
            a, b, kind = ln.split(",")
            anomalies.append(AnomalyEvent(AnomalyType(kind.strip()), float(a), float(b)))
    dyn = np.zeros(0, dtype=int)
    if (d / "dynamic_features.csv").exists():
        vals = (d / "dynamic_features.csv").read_text(encoding="utf-8").split()[1:]
        dyn = np.array([int(v) for v in vals], dtype=int)

    wheel_v = np.column_stack([wh[:, 1:3], np.zeros(len(wh))])
    return Dataset(calib, ImuData(imu[:, 0], imu[:, 1:4], imu[:, 4:7]),
                   WheelData(wh[:, 0], wheel_v, wh[:, 3]), frames, gnss, gt, anomalies, dyn)
