import math

import numpy as np
import pytest
from scipy.stats import chi2, norm

from spectral_mcl import mcl, sensing, sim
from spectral_mcl.errors import EmptyMap
from spectral_mcl.mcl import (
    FilterConfig,
    MCLFilter,
    ParticleSet,
    adapt_count,
    estimate_pose,
    init_particles,
    predict,
    resample,
    update,
)
from spectral_mcl.motion import MotionNoise, OdometryDelta, Pose2
from spectral_mcl.sensing import LIKELIHOOD_FIELD, SensorModelConfig
from spectral_mcl.spectral import MetricKind, Spectrum
from spectral_mcl.worldmap import FREE, OCCUPIED, MaterialMap


def uniform_cfg(**kw):
    base = dict(n_min=50, n_max=500, init_mode=mcl.UNIFORM_INIT, rng_seed=0)
    base.update(kw)
    return FilterConfig(**base)


def tiny_map(occ, resolution=0.1):
    lib = [Spectrum(200.0, 5.0, np.array([1.0, 0.0, 0.5, 0.0]))]
    mats = np.where(np.asarray(occ) == OCCUPIED, 0, -1)
    return MaterialMap(np.asarray(occ, dtype=np.uint8), mats, lib, resolution)


# ------------------------------------------------------------------- init

def test_init_gaussian_zero_std_collapses_to_mean():
    m = tiny_map(np.full((6, 6), FREE))
    mean = Pose2(0.31, 0.29, 0.4)
    cfg = FilterConfig(n_min=10, n_max=64, init_mode=mcl.GAUSSIAN_INIT,
                       init_mean=mean, init_std_xy=0.0, init_std_theta=0.0, rng_seed=1)
    pset = init_particles(m, cfg)
    assert pset.n == 64
    assert np.all(pset.poses[:, 0] == mean.x)
    assert np.all(pset.poses[:, 1] == mean.y)
    assert np.all(pset.poses[:, 2] == mean.theta)
    np.testing.assert_allclose(pset.weights, 1.0 / 64)


def test_init_uniform_single_free_cell():
    occ = np.full((4, 4), OCCUPIED)
    occ[2, 1] = FREE
    m = tiny_map(occ)
    pset = init_particles(m, uniform_cfg(n_max=128))
    ix = np.floor(pset.poses[:, 0] / m.resolution).astype(int)
    iy = np.floor(pset.poses[:, 1] / m.resolution).astype(int)
    assert np.all(ix == 1) and np.all(iy == 2)


def test_init_uniform_half_free_chi_square():
    occ = np.full((8, 8), OCCUPIED)
    occ[:4, :] = FREE
    m = tiny_map(occ)
    n = 20_000
    pset = init_particles(m, uniform_cfg(n_max=n, rng_seed=4))
    ix = np.floor(pset.poses[:, 0] / m.resolution).astype(int)
    iy = np.floor(pset.poses[:, 1] / m.resolution).astype(int)
    assert np.all(iy < 4)  # every sample in free space
    counts = np.zeros(32)
    for x, y in zip(ix, iy):
        counts[y * 8 + x] += 1
    expected = n / 32.0
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert chi2.sf(stat, 31) > 0.01


def test_init_no_free_space():
    m = tiny_map(np.full((3, 3), OCCUPIED))
    with pytest.raises(EmptyMap):
        init_particles(m, uniform_cfg())


# ---------------------------------------------------------------- predict

def test_predict_zero_motion_is_identity():
    rng = np.random.default_rng(0)
    pset = ParticleSet(rng.normal(size=(50, 3)), np.full(50, 0.02))
    out = predict(pset, OdometryDelta(0, 0, 0), MotionNoise.zero(), rng)
    np.testing.assert_array_equal(out.poses[:, :2], pset.poses[:, :2])
    np.testing.assert_array_equal(out.weights, pset.weights)


def test_predict_translates_in_heading_frame():
    poses = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, math.pi / 2]])
    pset = ParticleSet(poses, np.full(2, 0.5))
    out = predict(pset, OdometryDelta(1.0, 0.0, 0.0), MotionNoise.zero(),
                  np.random.default_rng(0))
    np.testing.assert_allclose(out.poses[0], [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(out.poses[1], [0.0, 1.0, math.pi / 2], atol=1e-12)


def test_predict_spread_grows_by_noise_covariance():
    n = 50_000
    pset = ParticleSet(np.zeros((n, 3)), np.full(n, 1.0 / n))
    noise = MotionNoise.from_stds(0.05, 0.02, 0.01)
    out = predict(pset, OdometryDelta(0, 0, 0), noise, np.random.default_rng(7))
    cov = np.cov(out.poses.T)
    np.testing.assert_allclose(np.diag(cov), [0.05**2, 0.02**2, 0.01**2], rtol=0.05)


# ----------------------------------------------------------------- update

def test_update_uniform_when_all_particles_identical(corridor_bundle, noise_free_dataset):
    m, metric, fields = corridor_bundle
    gt, records = noise_free_dataset
    pose = gt.pose(5).as_array()
    pset = ParticleSet(np.tile(pose, (8, 1)), np.full(8, 1.0 / 8))
    cfg = SensorModelConfig(model=LIKELIHOOD_FIELD, eps_range=0.0, eps_material=1.0,
                            metric=metric, use_ranges=False, max_range=2.0)
    out = update(pset, records[5].scan, m, fields, cfg)
    np.testing.assert_allclose(out.weights, 1.0 / 8, atol=1e-12)
    assert abs(out.weights.sum() - 1.0) < 1e-12


def test_update_prefers_true_pose(corridor_bundle, noise_free_dataset):
    m, metric, fields = corridor_bundle
    gt, records = noise_free_dataset
    true_pose = gt.pose(10).as_array()
    off = true_pose + np.array([1.0, 0.0, 0.0])
    pset = ParticleSet(np.stack([true_pose, off]), np.array([0.5, 0.5]))
    cfg = SensorModelConfig(model=LIKELIHOOD_FIELD, eps_range=0.0, eps_material=1.0,
                            metric=metric, use_ranges=False, max_range=2.0)
    out = update(pset, records[10].scan, m, fields, cfg)
    assert out.weights[0] > 0.5
    assert abs(out.weights.sum() - 1.0) < 1e-12


# --------------------------------------------------------------- resample

def test_resample_untriggered_on_uniform_weights():
    rng = np.random.default_rng(0)
    pset = ParticleSet(rng.normal(size=(100, 3)), np.full(100, 0.01))
    out = resample(pset, uniform_cfg(resample_threshold=0.5), rng)
    assert out is pset


def test_resample_degenerate_mass():
    rng = np.random.default_rng(1)
    poses = rng.normal(size=(10, 3))
    w = np.zeros(10)
    w[3] = 1.0
    pset = ParticleSet(poses, w)
    out = resample(pset, uniform_cfg(resample_threshold=1.0), rng)
    assert out.n == 10
    np.testing.assert_array_equal(out.poses, np.tile(poses[3], (10, 1)))
    np.testing.assert_allclose(out.weights, 0.1)


def test_resample_multiplicities_unbiased():
    weights = np.array([0.5, 0.3, 0.2])
    poses = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    pset = ParticleSet(poses, weights)
    cfg = uniform_cfg(resample_threshold=1.0)
    rng = np.random.default_rng(123)
    trials = 10_000
    counts = np.zeros((trials, 3))
    for t in range(trials):
        out = resample(pset, cfg, rng)
        for k in range(3):
            counts[t, k] = np.sum(out.poses[:, 0] == float(k))
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(trials)
    expected = 3 * weights
    for k in range(3):
        assert abs(mean[k] - expected[k]) <= 3.0 * max(se[k], 1e-12)


def test_resample_resizing():
    rng = np.random.default_rng(5)
    pset = ParticleSet(rng.normal(size=(100, 3)), np.full(100, 0.01))
    w = rng.random(100)
    pset = ParticleSet(pset.poses, w / w.sum())
    out = resample(pset, uniform_cfg(resample_threshold=1.0), rng, n_out=40)
    assert out.n == 40
    np.testing.assert_allclose(out.weights, 1.0 / 40)


# ------------------------------------------------------------ adapt_count

def test_adapt_count_bounds():
    cfg = uniform_cfg(n_min=25, n_max=400)
    clustered = ParticleSet(np.full((50, 3), 0.1), np.full(50, 0.02))
    assert adapt_count(clustered, cfg) == 25
    rng = np.random.default_rng(2)
    spread = ParticleSet(np.column_stack([rng.uniform(0, 50, 600),
                                          rng.uniform(0, 50, 600),
                                          rng.uniform(-3, 3, 600)]),
                         np.full(600, 1 / 600))
    assert adapt_count(spread, cfg) == 400


def test_adapt_count_formula_oracle():
    cfg = uniform_cfg(n_min=1, n_max=10**9)
    rng = np.random.default_rng(3)
    poses = np.column_stack([rng.uniform(0, 3, 120), rng.uniform(0, 3, 120),
                             rng.uniform(-3, 3, 120)])
    pset = ParticleSet(poses, np.full(120, 1 / 120))
    bins = {(math.floor(x / 0.5), math.floor(y / 0.5), math.floor((t + math.pi) / (math.pi / 8)))
            for x, y, t in poses}
    k = len(bins)
    z = norm.ppf(0.99)
    a = 2.0 / (9.0 * (k - 1))
    want = math.ceil((k - 1) / (2 * 0.05) * (1 - a + math.sqrt(a) * z) ** 3)
    assert adapt_count(pset, cfg) == want


def test_adapt_count_monotone_in_bins():
    cfg = uniform_cfg(n_min=1, n_max=10**9)
    rng = np.random.default_rng(4)
    prev = 0
    for n_clusters in (2, 4, 8, 16):
        centers = rng.uniform(0, 20, (n_clusters, 2))
        poses = np.column_stack([np.repeat(centers[:, 0], 5), np.repeat(centers[:, 1], 5),
                                 np.zeros(5 * n_clusters)])
        pset = ParticleSet(poses, np.full(len(poses), 1 / len(poses)))
        cur = adapt_count(pset, cfg)
        assert cur >= prev
        prev = cur


# ---------------------------------------------------------------- estimate

def test_estimate_identical_particles():
    pset = ParticleSet(np.tile([1.0, 2.0, 0.5], (7, 1)), np.full(7, 1 / 7))
    pose, cov = estimate_pose(pset)
    np.testing.assert_allclose([pose.x, pose.y, pose.theta], [1.0, 2.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(cov, 0.0, atol=1e-15)


def test_estimate_circular_mean():
    t = math.pi - 0.1
    pset = ParticleSet(np.array([[0, 0, t], [0, 0, -t]]), np.array([0.5, 0.5]))
    pose, _ = estimate_pose(pset)
    assert abs(abs(pose.theta) - math.pi) < 1e-9


def test_estimate_matches_moment_oracle():
    rng = np.random.default_rng(6)
    poses = rng.normal(scale=0.3, size=(200, 3))
    w = rng.random(200)
    w /= w.sum()
    pset = ParticleSet(poses, w)
    pose, cov = estimate_pose(pset)
    assert abs(pose.x - np.sum(w * poses[:, 0])) < 1e-12
    assert abs(pose.y - np.sum(w * poses[:, 1])) < 1e-12
    want_theta = math.atan2(np.sum(w * np.sin(poses[:, 2])), np.sum(w * np.cos(poses[:, 2])))
    assert abs(pose.theta - want_theta) < 1e-12
    resid = poses - np.array([pose.x, pose.y, 0.0])
    resid[:, 2] = np.arctan2(np.sin(poses[:, 2] - pose.theta), np.cos(poses[:, 2] - pose.theta))
    want_cov = (resid * w[:, None]).T @ resid
    np.testing.assert_allclose(cov, want_cov, atol=1e-12)


# ------------------------------------------------------------- determinism

def test_full_filter_run_bit_reproducible(corridor_bundle, noise_free_dataset):
    m, metric, fields = corridor_bundle
    gt, records = noise_free_dataset
    cfg = SensorModelConfig(model=LIKELIHOOD_FIELD, eps_range=0.0, eps_material=1.0,
                            metric=metric, use_ranges=False, max_range=2.0)
    fcfg = FilterConfig(n_min=50, n_max=200, init_mode=mcl.GAUSSIAN_INIT,
                        init_mean=gt.pose(0), init_std_xy=0.3, init_std_theta=0.3,
                        rng_seed=77)
    noise = MotionNoise.from_stds(0.02, 0.02, 0.02)

    def run_once():
        filt = MCLFilter(m, fields, cfg, fcfg, noise)
        out = []
        for rec in records[:15]:
            pose, cov = filt.step(rec.odom, rec.scan)
            out.append((pose.x, pose.y, pose.theta))
        return out, filt.particles

    a, pa = run_once()
    b, pb = run_once()
    assert a == b
    np.testing.assert_array_equal(pa.poses, pb.poses)
    np.testing.assert_array_equal(pa.weights, pb.weights)


def test_weights_normalised_throughout_run(corridor_bundle, noise_free_dataset):
    m, metric, fields = corridor_bundle
    gt, records = noise_free_dataset
    cfg = SensorModelConfig(model=LIKELIHOOD_FIELD, eps_range=0.5, eps_material=0.5,
                            metric=metric, max_range=2.0)
    fcfg = FilterConfig(n_min=50, n_max=150, init_mode=mcl.GAUSSIAN_INIT,
                        init_mean=gt.pose(0), init_std_xy=0.4, init_std_theta=0.4,
                        rng_seed=3)
    filt = MCLFilter(m, fields, cfg, fcfg, MotionNoise.from_stds(0.02, 0.02, 0.02))
    for rec in records[:20]:
        filt.particles = mcl.predict(filt.particles, rec.odom, filt.motion_noise, filt.rng)
        filt.particles = mcl.update(filt.particles, rec.scan, m, fields, cfg)
        assert abs(filt.particles.weights.sum() - 1.0) < 1e-9
        filt.particles = mcl.resample(filt.particles, fcfg, filt.rng)
