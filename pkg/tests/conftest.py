import numpy as np
import pytest

from spectral_mcl import sensing, sim
from spectral_mcl.spectral import MetricKind, Spectrum


def random_spectrum(rng, n=16, grid_start=200.0, grid_step=5.0):
    return Spectrum(grid_start, grid_step, rng.random(n) + 0.05)


def random_unit_sum(rng, n=16):
    s = random_spectrum(rng, n)
    return s.with_intensities(s.intensities / s.intensities.sum())


@pytest.fixture(scope="session")
def twin_world():
    return sim.generate_world(sim.WorldSpec(layout=sim.SYMMETRIC_TWIN, seed=3))


@pytest.fixture(scope="session")
def corridor_world():
    return sim.generate_world(sim.WorldSpec(layout=sim.CORRIDOR_LOOP, seed=3))


@pytest.fixture(scope="session")
def small_library():
    return sim.synthetic_library(5, seed=11)


@pytest.fixture(scope="session")
def corridor_bundle(corridor_world):
    """Corridor map plus calibrated metric and prebuilt fields."""
    metric = sensing.calibrated_metric_for_map(corridor_world, MetricKind.MOD_L2)
    fields = sensing.build_fields(corridor_world, metric)
    return corridor_world, metric, fields


@pytest.fixture(scope="session")
def noise_free_dataset(corridor_world):
    cfg = sim.SensorTruthConfig(
        range_sigma=0.0,
        noise=sim.NoiseConfig(0.0, 0.0, 0.0, 0),
        odom_noise=sim.MotionNoise.zero(),
    )
    spec = sim.WorldSpec(layout=sim.CORRIDOR_LOOP, seed=3)
    script = sim.default_script(spec)
    gt, records = sim.generate_dataset(corridor_world, script, cfg, seed=5)
    return gt, records
