"""SE(2) pose algebra and the odometry motion model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidCovariance

TAU = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return -((math.pi - theta) % TAU - math.pi)


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised wrap_angle."""
    return -((math.pi - np.asarray(theta, dtype=float)) % TAU - math.pi)


@dataclass(frozen=True)
class Pose2:
    """A 2D rigid-body pose. theta is always stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(frozen=True)
class OdometryDelta:
    """Frame-local displacement (dx, dy in the previous pose frame) plus heading change."""

    dx: float
    dy: float
    dtheta: float

    def __post_init__(self):
        for name in ("dx", "dy", "dtheta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta], dtype=float)


ZERO_DELTA = OdometryDelta(0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class MotionNoise:
    """3x3 covariance over (dx, dy, dtheta), validated symmetric PSD."""

    covariance: np.ndarray

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (3, 3):
            raise InvalidCovariance(f"expected 3x3 covariance, got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise InvalidCovariance("covariance entries must be finite")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-9 * scale:
            raise InvalidCovariance("covariance must be symmetric")
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-9 * scale:
            raise InvalidCovariance(f"covariance has negative eigenvalue {vals.min():g}")
        # Eigen factor instead of Cholesky so axis-locked (semi-definite) configs work.
        factor = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
        cov.setflags(write=False)
        factor.setflags(write=False)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_factor", factor)

    @classmethod
    def from_stds(cls, sigma_x: float, sigma_y: float, sigma_theta: float) -> "MotionNoise":
        return cls(np.diag([sigma_x**2, sigma_y**2, sigma_theta**2]))

    @classmethod
    def zero(cls) -> "MotionNoise":
        return cls(np.zeros((3, 3)))

    @property
    def factor(self) -> np.ndarray:
        """Matrix L with L @ L.T == covariance."""
        return self._factor  # type: ignore[attr-defined]


def compose(p: Pose2, d: OdometryDelta) -> Pose2:
    """Apply a frame-local delta to a pose (rigid-body composition)."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(
        p.x + c * d.dx - s * d.dy,
        p.y + s * d.dx + c * d.dy,
        p.theta + d.dtheta,
    )


def invert_delta(d: OdometryDelta) -> OdometryDelta:
    """Delta that undoes d: compose(compose(p, d), invert_delta(d)) == p."""
    c, s = math.cos(d.dtheta), math.sin(d.dtheta)
    return OdometryDelta(-(c * d.dx + s * d.dy), -(-s * d.dx + c * d.dy), -d.dtheta)


def relative_delta(a: Pose2, b: Pose2) -> OdometryDelta:
    """Delta expressed in a's frame such that compose(a, delta) == b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    ex, ey = b.x - a.x, b.y - a.y
    return OdometryDelta(c * ex + s * ey, -s * ex + c * ey, wrap_angle(b.theta - a.theta))


def propagate(p: Pose2, d: OdometryDelta, noise: MotionNoise,
              rng: np.random.Generator | int) -> Pose2:
    """Sample a delta from N(d, covariance) and compose it onto p.

    Zero covariance reduces exactly to compose; a fixed seed gives a fixed pose.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    z = rng.standard_normal(3)
    dx, dy, dtheta = d.as_array() + noise.factor @ z
    return compose(p, OdometryDelta(dx, dy, dtheta))


def compose_many(poses: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Row-wise compose of (N,3) poses with (N,3) frame-local deltas."""
    poses = np.asarray(poses, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    c = np.cos(poses[:, 2])
    s = np.sin(poses[:, 2])
    out = np.empty_like(poses)
    out[:, 0] = poses[:, 0] + c * deltas[:, 0] - s * deltas[:, 1]
    out[:, 1] = poses[:, 1] + s * deltas[:, 0] + c * deltas[:, 1]
    out[:, 2] = wrap_angles(poses[:, 2] + deltas[:, 2])
    return out


def propagate_many(poses: np.ndarray, d: OdometryDelta, noise: MotionNoise,
                   rng: np.random.Generator) -> np.ndarray:
    """Independently propagate each pose row through the noisy motion model."""
    z = rng.standard_normal((poses.shape[0], 3))
    deltas = d.as_array()[None, :] + z @ noise.factor.T
    return compose_many(poses, deltas)
