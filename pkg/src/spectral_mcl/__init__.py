"""Material-aware Monte Carlo localisation on 2D floorplans with embedded spectra."""

from .errors import SpectralMclError
from .motion import MotionNoise, OdometryDelta, Pose2, compose, propagate
from .spectral import (
    MetricKind,
    NoiseConfig,
    SimilarityMetric,
    Spectrum,
    calibrate_scale,
    distance_to_likelihood,
)
from .worldmap import ChamferField, MaterialMap, RayHit, load_map, load_map_meta, raycast
from .sensing import ScanEntry, ScanTuple, SensorModelConfig, build_fields, scan_likelihood
from .mcl import FilterConfig, MCLFilter, Particle, ParticleSet
from .sim import SensorTruthConfig, TrajectoryScript, WorldSpec, generate_dataset, generate_world
from .evaluate import ErrorStats, TrajectoryLog, compute_ate, compute_rpe

__version__ = "0.1.0"

__all__ = [
    "SpectralMclError",
    "Pose2", "OdometryDelta", "MotionNoise", "compose", "propagate",
    "Spectrum", "NoiseConfig", "SimilarityMetric", "MetricKind",
    "calibrate_scale", "distance_to_likelihood",
    "MaterialMap", "ChamferField", "RayHit", "load_map", "load_map_meta", "raycast",
    "ScanEntry", "ScanTuple", "SensorModelConfig", "build_fields", "scan_likelihood",
    "FilterConfig", "MCLFilter", "Particle", "ParticleSet",
    "WorldSpec", "TrajectoryScript", "SensorTruthConfig", "generate_world", "generate_dataset",
    "TrajectoryLog", "ErrorStats", "compute_ate", "compute_rpe",
    "__version__",
]
