"""Trajectory association, rigid alignment and ATE/RPE statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, InsufficientData, NoOverlap
from .motion import Pose2, wrap_angle, wrap_angles


@dataclass(frozen=True, eq=False)
class TrajectoryLog:
    """Timestamped SE(2) samples with strictly increasing timestamps."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        xs = np.array(self.xs, dtype=float)
        ys = np.array(self.ys, dtype=float)
        thetas = wrap_angles(np.array(self.thetas, dtype=float))
        if not (times.shape == xs.shape == ys.shape == thetas.shape) or times.ndim != 1:
            raise ValueError("times, xs, ys, thetas must be matching 1-D arrays")
        if times.size == 0:
            raise ValueError("trajectory must have at least one sample")
        if np.any(np.diff(times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        for arr in (times, xs, ys, thetas):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "thetas", thetas)

    def __len__(self) -> int:
        return int(self.times.size)

    def pose(self, i: int) -> Pose2:
        return Pose2(float(self.xs[i]), float(self.ys[i]), float(self.thetas[i]))

    @classmethod
    def from_poses(cls, samples: list[tuple[float, Pose2]]) -> "TrajectoryLog":
        return cls(
            np.array([t for t, _ in samples]),
            np.array([p.x for _, p in samples]),
            np.array([p.y for _, p in samples]),
            np.array([p.theta for _, p in samples]),
        )

    def slice(self, start: int, stop: int | None = None) -> "TrajectoryLog":
        sl = np.s_[start:stop]
        return TrajectoryLog(self.times[sl], self.xs[sl], self.ys[sl], self.thetas[sl])


def write_tum(path: str | Path, log: TrajectoryLog) -> None:
    """TUM text format: `timestamp tx ty tz qx qy qz qw`, yaw-only quaternion."""
    lines = []
    for t, x, y, theta in zip(log.times, log.xs, log.ys, log.thetas):
        qz = math.sin(float(theta) / 2.0)
        qw = math.cos(float(theta) / 2.0)
        lines.append(f"{float(t)!r} {float(x)!r} {float(y)!r} 0.0 0.0 0.0 {qz!r} {qw!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum(path: str | Path) -> TrajectoryLog:
    times, xs, ys, thetas = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno + 1}: expected 8 fields, got {len(parts)}")
        t, x, y, _, _, _, qz, qw = (float(v) for v in parts)
        times.append(t)
        xs.append(x)
        ys.append(y)
        thetas.append(2.0 * math.atan2(qz, qw))
    return TrajectoryLog(np.array(times), np.array(xs), np.array(ys), np.array(thetas))


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    median: float
    sd: float
    min: float
    max: float
    count: int

    @classmethod
    def from_residuals(cls, residuals: np.ndarray) -> "ErrorStats":
        r = np.asarray(residuals, dtype=float)
        if r.size == 0:
            raise InsufficientData("no residuals to summarise")
        sd = float(np.std(r, ddof=1)) if r.size > 1 else 0.0
        return cls(
            rmse=float(np.sqrt(np.mean(r * r))),
            mean=float(np.mean(r)),
            median=float(np.median(r)),
            sd=sd,
            min=float(np.min(r)),
            max=float(np.max(r)),
            count=int(r.size),
        )

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse, "mean": self.mean, "median": self.median,
            "sd": self.sd, "min": self.min, "max": self.max, "count": self.count,
        }


def associate(est: TrajectoryLog, gt: TrajectoryLog,
              max_dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-timestamp pairing; each sample used at most once."""
    candidates = []
    for i, te in enumerate(est.times):
        for j, tg in enumerate(gt.times):
            dt = abs(te - tg)
            if dt <= max_dt:
                candidates.append((dt, i, j))
    candidates.sort()
    used_e: set[int] = set()
    used_g: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoOverlap(f"no timestamp pairs within {max_dt} s")
    pairs.sort()
    ei = np.array([p[0] for p in pairs], dtype=int)
    gi = np.array([p[1] for p in pairs], dtype=int)
    return ei, gi


def align_rigid(est_xy: np.ndarray, gt_xy: np.ndarray) -> Pose2:
    """Least-squares rigid 2D transform T minimising sum |T(est) - gt|^2.

    Returned as a Pose2 (tx, ty, rotation); apply with apply_transform.
    """
    est_xy = np.asarray(est_xy, dtype=float)
    gt_xy = np.asarray(gt_xy, dtype=float)
    if est_xy.shape != gt_xy.shape or est_xy.ndim != 2 or est_xy.shape[0] < 2:
        raise DegenerateGeometry("need >= 2 paired points")
    ec = est_xy.mean(axis=0)
    gc = gt_xy.mean(axis=0)
    e = est_xy - ec
    g = gt_xy - gc
    if not np.any(np.abs(e) > 0) or not np.any(np.abs(g) > 0):
        raise DegenerateGeometry("all points coincident")
    cross = float(np.sum(e[:, 0] * g[:, 1] - e[:, 1] * g[:, 0]))
    dot = float(np.sum(e[:, 0] * g[:, 0] + e[:, 1] * g[:, 1]))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    tx = gc[0] - (c * ec[0] - s * ec[1])
    ty = gc[1] - (s * ec[0] + c * ec[1])
    return Pose2(tx, ty, theta)


def apply_transform(transform: Pose2, log: TrajectoryLog) -> TrajectoryLog:
    """Apply a global rigid transform to every sample of a trajectory."""
    c, s = math.cos(transform.theta), math.sin(transform.theta)
    return TrajectoryLog(
        log.times,
        transform.x + c * log.xs - s * log.ys,
        transform.y + s * log.xs + c * log.ys,
        wrap_angles(log.thetas + transform.theta),
    )


def _default_max_dt(gt: TrajectoryLog) -> float:
    if len(gt) < 2:
        return 0.05
    return float(np.median(np.diff(gt.times))) / 2.0


def compute_ate(est: TrajectoryLog, gt: TrajectoryLog, max_dt: float | None = None,
                align: bool = True) -> ErrorStats:
    """Absolute trajectory error: per-pair position residual statistics.

    With align=True (the default) the estimate is first rigidly aligned to
    the ground truth; align=False keeps both in their shared frame.
    """
    if max_dt is None:
        max_dt = _default_max_dt(gt)
    ei, gi = associate(est, gt, max_dt)
    e_xy = np.column_stack([est.xs[ei], est.ys[ei]])
    g_xy = np.column_stack([gt.xs[gi], gt.ys[gi]])
    if align:
        t = align_rigid(e_xy, g_xy)
        c, s = math.cos(t.theta), math.sin(t.theta)
        e_xy = np.column_stack([
            t.x + c * e_xy[:, 0] - s * e_xy[:, 1],
            t.y + s * e_xy[:, 0] + c * e_xy[:, 1],
        ])
    residuals = np.linalg.norm(e_xy - g_xy, axis=1)
    return ErrorStats.from_residuals(residuals)


def _relative(x0, y0, t0, x1, y1, t1):
    """SE(2) relative motion (x0,y0,t0)^-1 * (x1,y1,t1)."""
    c, s = math.cos(t0), math.sin(t0)
    dx, dy = x1 - x0, y1 - y0
    return c * dx + s * dy, -s * dx + c * dy, wrap_angle(t1 - t0)


def compute_rpe(est: TrajectoryLog, gt: TrajectoryLog, delta: int = 1,
                max_dt: float | None = None) -> tuple[ErrorStats, ErrorStats]:
    """Relative pose error over a fixed frame delta.

    Per index i the error is rel_gt(i, i+delta)^-1 * rel_est(i, i+delta);
    returns (translational stats in meters, rotational stats in degrees).
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    if max_dt is None:
        max_dt = _default_max_dt(gt)
    ei, gi = associate(est, gt, max_dt)
    n = ei.size
    if n < delta + 1:
        raise InsufficientData(f"{n} pairs cannot support delta {delta}")
    trans = np.empty(n - delta)
    rot = np.empty(n - delta)
    for k in range(n - delta):
        a = ei[k], ei[k + delta]
        b = gi[k], gi[k + delta]
        edx, edy, edt = _relative(est.xs[a[0]], est.ys[a[0]], est.thetas[a[0]],
                                  est.xs[a[1]], est.ys[a[1]], est.thetas[a[1]])
        gdx, gdy, gdt = _relative(gt.xs[b[0]], gt.ys[b[0]], gt.thetas[b[0]],
                                  gt.xs[b[1]], gt.ys[b[1]], gt.thetas[b[1]])
        ex, ey, et = _relative(gdx, gdy, gdt, edx, edy, edt)
        trans[k] = math.hypot(ex, ey)
        rot[k] = abs(math.degrees(et))
    return ErrorStats.from_residuals(trans), ErrorStats.from_residuals(rot)
