"""Monte Carlo localisation: init, predict, weight, resample, estimate.

Prediction and weighting are data-parallel over the particle array; the
filter object itself is a single-owner state machine whose snapshots
(ParticleSet) are immutable and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import EmptyMap
from .motion import MotionNoise, OdometryDelta, Pose2, propagate_many, wrap_angles
from .sensing import (
    PrecomputedFields,
    PreparedScan,
    ScanTuple,
    SensorModelConfig,
    prepare_scan,
    scan_log_likelihoods,
)
from .worldmap import MaterialMap

UNIFORM_INIT = "uniform"
GAUSSIAN_INIT = "gaussian"

# Histogram used by the adaptive particle bound: 0.5 m position bins, pi/8 heading bins.
_KLD_BIN_XY = 0.5
_KLD_BIN_THETA = math.pi / 8.0


@dataclass(frozen=True)
class Particle:
    pose: Pose2
    weight: float


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Weighted pose hypotheses; poses is (N, 3), weights sum to one."""

    poses: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        poses = np.array(self.poses, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3 or weights.shape != (poses.shape[0],):
            raise ValueError("poses must be (N, 3) with matching (N,) weights")
        poses.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return int(self.poses.shape[0])

    def particle(self, i: int) -> Particle:
        x, y, theta = self.poses[i]
        return Particle(Pose2(x, y, theta), float(self.weights[i]))

    def effective_sample_size(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))


@dataclass(frozen=True)
class FilterConfig:
    n_min: int = 50
    n_max: int = 1000
    init_mode: str = GAUSSIAN_INIT
    init_mean: Pose2 | None = None
    init_std_xy: float = 2.0
    init_std_theta: float = 2.0
    resample_threshold: float = 0.5
    kld_epsilon: float = 0.05
    kld_delta: float = 0.01
    adapt: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 < self.n_min <= self.n_max):
            raise ValueError("need 0 < n_min <= n_max")
        if self.init_mode not in (UNIFORM_INIT, GAUSSIAN_INIT):
            raise ValueError(f"unknown init mode {self.init_mode!r}")
        if not (0.0 < self.resample_threshold <= 1.0):
            raise ValueError("resample_threshold must be in (0, 1]")


def init_particles(m: MaterialMap, cfg: FilterConfig,
                   rng: np.random.Generator | None = None) -> ParticleSet:
    """Spread n_max particles uniformly over free space or as a pose Gaussian."""
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    n = cfg.n_max
    if cfg.init_mode == UNIFORM_INIT:
        free = m.free_cells()
        if free.shape[0] == 0:
            raise EmptyMap("no free cells to initialise in")
        picks = free[rng.integers(0, free.shape[0], n)]
        offsets = rng.random((n, 2))
        mx = (picks[:, 0] + offsets[:, 0]) * m.resolution
        my = (picks[:, 1] + offsets[:, 1]) * m.resolution
        c, s = math.cos(m.origin.theta), math.sin(m.origin.theta)
        poses = np.empty((n, 3))
        poses[:, 0] = m.origin.x + c * mx - s * my
        poses[:, 1] = m.origin.y + s * mx + c * my
        poses[:, 2] = wrap_angles(rng.uniform(-math.pi, math.pi, n))
    else:
        if cfg.init_mean is None:
            raise ValueError("gaussian init needs init_mean")
        mean = cfg.init_mean
        poses = np.empty((n, 3))
        filled = 0
        attempts = 0
        while filled < n:
            attempts += 1
            if attempts > 10000:
                raise EmptyMap("gaussian init keeps sampling outside the map")
            batch = max(64, 2 * (n - filled))
            xs = mean.x + cfg.init_std_xy * rng.standard_normal(batch)
            ys = mean.y + cfg.init_std_xy * rng.standard_normal(batch)
            mx, my = m.to_map_frame(xs, ys)
            ix = np.floor(mx / m.resolution)
            iy = np.floor(my / m.resolution)
            ok = (ix >= 0) & (ix < m.width) & (iy >= 0) & (iy < m.height)
            take = min(int(ok.sum()), n - filled)
            poses[filled:filled + take, 0] = xs[ok][:take]
            poses[filled:filled + take, 1] = ys[ok][:take]
            filled += take
        poses[:, 2] = wrap_angles(mean.theta + cfg.init_std_theta * rng.standard_normal(n))
    weights = np.full(n, 1.0 / n)
    return ParticleSet(poses, weights)


def predict(pset: ParticleSet, d: OdometryDelta, noise: MotionNoise,
            rng: np.random.Generator) -> ParticleSet:
    """Propagate every particle through the noisy motion model; weights unchanged."""
    return ParticleSet(propagate_many(pset.poses, d, noise, rng), pset.weights)


def update(pset: ParticleSet, scan: ScanTuple, m: MaterialMap,
           fields: PrecomputedFields, cfg: SensorModelConfig) -> ParticleSet:
    """Multiply weights by scan likelihoods and renormalise."""
    return update_prepared(pset, prepare_scan(scan, fields, cfg), m, fields, cfg)


def update_prepared(pset: ParticleSet, prep: PreparedScan, m: MaterialMap,
                    fields: PrecomputedFields, cfg: SensorModelConfig) -> ParticleSet:
    loglik = scan_log_likelihoods(prep, pset.poses, m, fields, cfg)
    finite = np.isfinite(loglik)
    if not finite.any():
        # every particle left the free space; reset to uniform rather than die
        return ParticleSet(pset.poses, np.full(pset.n, 1.0 / pset.n))
    shifted = np.exp(loglik - loglik[finite].max())
    weights = pset.weights * shifted
    total = float(weights.sum())
    if total <= 0.0:
        return ParticleSet(pset.poses, np.full(pset.n, 1.0 / pset.n))
    return ParticleSet(pset.poses, weights / total)


def resample(pset: ParticleSet, cfg: FilterConfig, rng: np.random.Generator,
             n_out: int | None = None) -> ParticleSet:
    """Systematic (low-variance) resampling, triggered by effective sample size.

    Runs only when N_eff < resample_threshold * n; otherwise the set is
    returned unchanged. By default the particle count is preserved; n_out
    lets the caller resize (used with the adaptive bound).
    """
    n = pset.n
    if pset.effective_sample_size() >= cfg.resample_threshold * n:
        return pset
    n_out = n if n_out is None else int(n_out)
    positions = (rng.random() + np.arange(n_out)) / n_out
    cumulative = np.cumsum(pset.weights)
    cumulative[-1] = 1.0
    idx = np.minimum(np.searchsorted(cumulative, positions, side="left"), n - 1)
    return ParticleSet(pset.poses[idx], np.full(n_out, 1.0 / n_out))


def adapt_count(pset: ParticleSet, cfg: FilterConfig) -> int:
    """KLD-style particle bound from the occupied-bin count, clamped to [n_min, n_max]."""
    bins = {
        (math.floor(x / _KLD_BIN_XY), math.floor(y / _KLD_BIN_XY),
         math.floor((theta + math.pi) / _KLD_BIN_THETA))
        for x, y, theta in pset.poses
    }
    k = len(bins)
    if k <= 1:
        return cfg.n_min
    z = norm.ppf(1.0 - cfg.kld_delta)
    a = 2.0 / (9.0 * (k - 1))
    bound = (k - 1) / (2.0 * cfg.kld_epsilon) * (1.0 - a + math.sqrt(a) * z) ** 3
    return int(min(max(math.ceil(bound), cfg.n_min), cfg.n_max))


def estimate_pose(pset: ParticleSet) -> tuple[Pose2, np.ndarray]:
    """Weighted mean pose (circular in heading) and 3x3 covariance."""
    w = pset.weights
    mean_x = float(w @ pset.poses[:, 0])
    mean_y = float(w @ pset.poses[:, 1])
    mean_theta = math.atan2(float(w @ np.sin(pset.poses[:, 2])),
                            float(w @ np.cos(pset.poses[:, 2])))
    resid = np.empty_like(pset.poses)
    resid[:, 0] = pset.poses[:, 0] - mean_x
    resid[:, 1] = pset.poses[:, 1] - mean_y
    resid[:, 2] = wrap_angles(pset.poses[:, 2] - mean_theta)
    cov = (resid * w[:, None]).T @ resid
    return Pose2(mean_x, mean_y, mean_theta), cov


class MCLFilter:
    """Single-owner filter loop: predict, weight, (maybe) resample, estimate."""

    def __init__(self, m: MaterialMap, fields: PrecomputedFields,
                 sensor_cfg: SensorModelConfig, filter_cfg: FilterConfig,
                 motion_noise: MotionNoise):
        self.map = m
        self.fields = fields
        self.sensor_cfg = sensor_cfg
        self.filter_cfg = filter_cfg
        self.motion_noise = motion_noise
        self.rng = np.random.default_rng(filter_cfg.rng_seed)
        self.particles = init_particles(m, filter_cfg, self.rng)

    def step(self, odom: OdometryDelta, scan: ScanTuple) -> tuple[Pose2, np.ndarray]:
        self.particles = predict(self.particles, odom, self.motion_noise, self.rng)
        prep = prepare_scan(scan, self.fields, self.sensor_cfg)
        self.particles = update_prepared(self.particles, prep, self.map,
                                         self.fields, self.sensor_cfg)
        n_target = adapt_count(self.particles, self.filter_cfg) if self.filter_cfg.adapt else None
        self.particles = resample(self.particles, self.filter_cfg, self.rng, n_out=n_target)
        return estimate_pose(self.particles)
