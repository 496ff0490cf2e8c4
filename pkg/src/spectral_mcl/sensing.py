"""Per-beam and per-scan likelihoods for the beam and likelihood-field models.

Evaluation is pure with respect to the (immutable) map, prebuilt fields and
config, so particles can be weighted in parallel. Observed and map spectra
are both passed through the same canonical preprocessing (baseline
correction, then the metric's normalisation) before any distance is taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import worldmap
from .errors import GridMismatch
from .motion import Pose2
from .spectral import (
    DEFAULT_BASELINE_ORDER,
    DegenerateWeight,
    MetricKind,
    SimilarityMetric,
    Spectrum,
    ZeroSpectrum,
    baseline_correct,
    calibrate_scale,
    distance_to_likelihood,
    prepare_for_metric,
    spectrum_distance,
)
from .worldmap import FREE, ChamferField, MaterialMap, RayHit

# Likelihood assigned to rays that miss, leave the map, or land on
# material-less cells; keeps every particle weight strictly positive.
MISS_FLOOR = 0.01

BEAM = "beam"
LIKELIHOOD_FIELD = "likelihood_field"


@dataclass(frozen=True)
class ScanEntry:
    """One sensor reading: bearing (robot frame), spectrum, optional range."""

    bearing: float
    spectrum: Spectrum
    range_m: float | None = None
    spectrum_id: int | None = None


@dataclass(frozen=True)
class ScanTuple:
    """One scan message: entries ordered by strictly increasing bearing."""

    entries: tuple[ScanEntry, ...]
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        bearings = [e.bearing for e in self.entries]
        if any(b2 <= b1 for b1, b2 in zip(bearings, bearings[1:])):
            raise ValueError("bearings must be strictly increasing within a scan")
        for e in self.entries:
            if e.range_m is not None and not (e.range_m > 0.0):
                raise ValueError(f"ranges must be positive, got {e.range_m}")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SensorModelConfig:
    model: str = LIKELIHOOD_FIELD
    eps_range: float = 0.0
    eps_material: float = 1.0
    sigma_o: float = 0.15
    metric: SimilarityMetric = field(default_factory=lambda: SimilarityMetric(MetricKind.MOD_L2))
    max_range: float = 2.0
    use_ranges: bool = True
    beams_per_scan: int = 16
    baseline_order: int = DEFAULT_BASELINE_ORDER

    def __post_init__(self):
        if self.model not in (BEAM, LIKELIHOOD_FIELD):
            raise ValueError(f"unknown sensor model {self.model!r}")
        if not (0.0 <= self.eps_range <= 1.0 and 0.0 <= self.eps_material <= 1.0):
            raise ValueError("epsilon weights must lie in [0, 1]")
        if abs(self.eps_range + self.eps_material - 1.0) > 1e-9:
            raise ValueError("epsilon weights must sum to 1")
        if not (self.sigma_o > 0.0):
            raise ValueError("sigma_o must be positive")
        if self.beams_per_scan < 1:
            raise ValueError("beams_per_scan must be >= 1")


@dataclass(frozen=True, eq=False)
class PrecomputedFields:
    """Everything the likelihood models look up at query time.

    One spectral chamfer field per library spectrum; observed spectra are
    snapped to their nearest library entry, so per-beam evaluation stays a
    constant number of lookups.
    """

    range_field: ChamferField
    spectral_fields: tuple[ChamferField, ...]
    corrected_library: tuple[Spectrum, ...]
    prepared_library: tuple[Spectrum, ...]
    metric: SimilarityMetric
    baseline_order: int


def build_fields(m: MaterialMap, metric: SimilarityMetric,
                 baseline_order: int = DEFAULT_BASELINE_ORDER) -> PrecomputedFields:
    """Precompute the range chamfer and the per-material spectral chamfers."""
    corrected = [baseline_correct(s, baseline_order) for s in m.library]
    prepared = [prepare_for_metric(s, metric.kind) for s in corrected]
    spectral_fields = tuple(
        worldmap.build_spectral_chamfer(m, metric, corrected[i], cell_spectra=corrected)
        for i in range(len(corrected))
    )
    return PrecomputedFields(
        range_field=worldmap.build_range_chamfer(m),
        spectral_fields=spectral_fields,
        corrected_library=tuple(corrected),
        prepared_library=tuple(prepared),
        metric=metric,
        baseline_order=baseline_order,
    )


def calibrated_metric_for_map(m: MaterialMap, kind: MetricKind, window: int = 5,
                              baseline_order: int = DEFAULT_BASELINE_ORDER) -> SimilarityMetric:
    """Calibrate the metric scale on the map's baseline-corrected library."""
    corrected = [baseline_correct(s, baseline_order) for s in m.library]
    return SimilarityMetric(kind=MetricKind(kind), window=window,
                            scale=calibrate_scale(corrected, kind, window))


@dataclass(frozen=True, eq=False)
class PreparedScan:
    """Scan entries after subsampling, preprocessing and library matching."""

    bearings: np.ndarray          # (E,)
    ranges: np.ndarray            # (E,), nan where absent or unused
    lib_dist: np.ndarray          # (E, M) metric distances to each library spectrum
    lib_like: np.ndarray          # (E, M) squared-exponential likelihoods of lib_dist
    snapped: np.ndarray           # (E,) nearest library id per entry
    timestamp: float

    def __len__(self) -> int:
        return int(self.bearings.size)


def _canonical(s: Spectrum, kind: MetricKind, baseline_order: int) -> Spectrum:
    return prepare_for_metric(baseline_correct(s, baseline_order), kind)


def prepare_scan(scan: ScanTuple, fields: PrecomputedFields,
                 cfg: SensorModelConfig) -> PreparedScan:
    """Subsample beams, preprocess spectra, match against the library.

    Entries whose spectrum degenerates under preprocessing are dropped.
    """
    entries = list(scan.entries)
    if len(entries) > cfg.beams_per_scan:
        keep = np.unique(np.round(np.linspace(0, len(entries) - 1, cfg.beams_per_scan)).astype(int))
        entries = [entries[i] for i in keep]

    metric = fields.metric
    bearings, ranges, dists = [], [], []
    for entry in entries:
        try:
            obs = _canonical(entry.spectrum, metric.kind, fields.baseline_order)
            row = [spectrum_distance(obs, lib, metric) for lib in fields.prepared_library]
        except (ZeroSpectrum, DegenerateWeight, GridMismatch):
            continue
        bearings.append(entry.bearing)
        r = entry.range_m if cfg.use_ranges else None
        ranges.append(math.nan if r is None else float(r))
        dists.append(row)

    lib_dist = np.array(dists, dtype=float).reshape(len(bearings), len(fields.prepared_library))
    lib_like = np.exp(-(lib_dist * lib_dist) / metric.scale)
    snapped = (np.argmin(lib_dist, axis=1) if len(bearings)
               else np.zeros(0, dtype=int))
    return PreparedScan(
        bearings=np.array(bearings, dtype=float),
        ranges=np.array(ranges, dtype=float),
        lib_dist=lib_dist,
        lib_like=lib_like,
        snapped=np.asarray(snapped, dtype=int),
        timestamp=scan.timestamp,
    )


def beam_range_likelihood(r: float, r_star: float, sigma_o: float) -> float:
    """Gaussian agreement between a measured and a predicted range, in (0, 1]."""
    diff = r - r_star
    return math.exp(-(diff * diff) / (2.0 * sigma_o * sigma_o))


def beam_material_likelihood(observed: Spectrum, hit: RayHit, m: MaterialMap,
                             metric: SimilarityMetric,
                             baseline_order: int = DEFAULT_BASELINE_ORDER) -> float:
    """Spectral agreement between an observation and the spectrum at a ray hit."""
    if hit.material_id is None:
        return MISS_FLOOR
    obs = _canonical(observed, metric.kind, baseline_order)
    ref = _canonical(m.library[hit.material_id], metric.kind, baseline_order)
    return distance_to_likelihood(spectrum_distance(obs, ref, metric), metric.scale)


def beam_combined_likelihood(entry: ScanEntry, particle: Pose2, m: MaterialMap,
                             cfg: SensorModelConfig) -> float:
    """Raycasting beam model: weighted sum of range and material agreement.

    With eps_material = 0 this is the plain range beam model; with
    eps_range = 0 it relies on the spectra alone. Rays that miss within
    max_range return the miss floor; out-of-map particles contribute zero.
    """
    cix, ciy = m.world_to_cell(particle.x, particle.y)
    if not m.in_bounds(cix, ciy):
        return 0.0
    hit = worldmap.raycast(m, particle, entry.bearing, cfg.max_range)
    if hit is None:
        return MISS_FLOOR
    p_mat = beam_material_likelihood(entry.spectrum, hit, m, cfg.metric, cfg.baseline_order)
    r = entry.range_m if cfg.use_ranges else None
    if r is None:
        return max(MISS_FLOOR, p_mat)
    p_range = beam_range_likelihood(r, hit.range_m, cfg.sigma_o)
    return max(MISS_FLOOR, cfg.eps_range * p_range + cfg.eps_material * p_mat)


def field_likelihood(entry: ScanEntry, particle: Pose2, m: MaterialMap,
                     fields: PrecomputedFields, cfg: SensorModelConfig) -> float:
    """Likelihood-field model: chamfer lookups at the beam endpoint.

    With a range present the endpoint is projected directly (no raycast) and
    the range-field and snapped spectral-field likelihoods are combined with
    the epsilon weights. Without a range, a single raycast supplies the
    endpoint and the spectral term alone is used.
    """
    cix, ciy = m.world_to_cell(particle.x, particle.y)
    if not m.in_bounds(cix, ciy):
        return 0.0
    metric = fields.metric
    obs = _canonical(entry.spectrum, metric.kind, fields.baseline_order)
    dists = np.array([spectrum_distance(obs, lib, metric) for lib in fields.prepared_library])
    snapped = int(np.argmin(dists))

    r = entry.range_m if cfg.use_ranges else None
    if r is None:
        hit = worldmap.raycast(m, particle, entry.bearing, cfg.max_range)
        if hit is None:
            return MISS_FLOOR
        ex, ey = hit.cell
        cost = float(fields.spectral_fields[snapped].costs[ey, ex])
        return max(MISS_FLOOR, distance_to_likelihood(cost, metric.scale))

    angle = particle.theta + entry.bearing
    ex = particle.x + r * math.cos(angle)
    ey = particle.y + r * math.sin(angle)
    eix, eiy = m.world_to_cell(ex, ey)
    if not m.in_bounds(eix, eiy):
        return MISS_FLOOR
    delta = float(fields.range_field.costs[eiy, eix]) * m.resolution
    p_range = beam_range_likelihood(delta, 0.0, cfg.sigma_o)
    cost = float(fields.spectral_fields[snapped].costs[eiy, eix])
    p_mat = distance_to_likelihood(cost, metric.scale)
    return max(MISS_FLOOR, cfg.eps_range * p_range + cfg.eps_material * p_mat)


def scan_likelihood(scan: ScanTuple, particle: Pose2, m: MaterialMap,
                    fields: PrecomputedFields | None, cfg: SensorModelConfig) -> float:
    """Product of per-beam likelihoods, accumulated in log space.

    Zero for particles outside the map or inside non-free cells; otherwise
    strictly positive thanks to the per-beam floors.
    """
    cix, ciy = m.world_to_cell(particle.x, particle.y)
    if not m.in_bounds(cix, ciy) or m.occupancy[ciy, cix] != FREE:
        return 0.0
    total = 0.0
    for entry in scan.entries:
        if cfg.model == BEAM:
            p = beam_combined_likelihood(entry, particle, m, cfg)
        else:
            if fields is None:
                raise ValueError("likelihood_field model needs prebuilt fields")
            p = field_likelihood(entry, particle, m, fields, cfg)
        if p <= 0.0:
            return 0.0
        total += math.log(p)
    return math.exp(total)


def scan_log_likelihoods(prep: PreparedScan, poses: np.ndarray, m: MaterialMap,
                         fields: PrecomputedFields, cfg: SensorModelConfig) -> np.ndarray:
    """Vectorised log scan likelihood for an (N, 3) pose array.

    Matches the scalar scan_likelihood path; -inf marks particles outside
    the map or in non-free cells.
    """
    poses = np.asarray(poses, dtype=float)
    n = poses.shape[0]
    out = np.zeros(n)
    mx, my = m.to_map_frame(poses[:, 0], poses[:, 1])
    pix = np.floor(mx / m.resolution).astype(np.int64)
    piy = np.floor(my / m.resolution).astype(np.int64)
    inb = (pix >= 0) & (pix < m.width) & (piy >= 0) & (piy < m.height)
    alive = inb.copy()
    alive[inb] = m.occupancy[piy[inb], pix[inb]] == FREE
    if len(prep) == 0:
        out[~alive] = -np.inf
        return out

    has_range = np.isfinite(prep.ranges)
    angles = poses[:, 2][:, None] + prep.bearings[None, :]

    if cfg.model == BEAM:
        beam_like = np.full((n, len(prep)), MISS_FLOOR)
        for e in range(len(prep)):
            hit, r_star, hix, hiy = worldmap.raycast_many(
                m, poses[:, 0], poses[:, 1], angles[:, e], cfg.max_range)
            mats = np.full(n, -1, dtype=np.int64)
            mats[hit] = m.material_id[hiy[hit], hix[hit]]
            p_mat = np.where(mats >= 0,
                             prep.lib_like[e, np.clip(mats, 0, None)],
                             MISS_FLOOR)
            if has_range[e]:
                diff = prep.ranges[e] - r_star
                p_range = np.exp(-(diff * diff) / (2.0 * cfg.sigma_o * cfg.sigma_o))
                combined = cfg.eps_range * p_range + cfg.eps_material * p_mat
            else:
                combined = p_mat
            beam_like[:, e] = np.where(hit, np.maximum(MISS_FLOOR, combined), MISS_FLOOR)
        out = np.sum(np.log(beam_like), axis=1)
        out[~alive] = -np.inf
        return out

    beam_like = np.full((n, len(prep)), MISS_FLOOR)
    ranged = np.nonzero(has_range)[0]
    if ranged.size:
        r = prep.ranges[ranged]
        ex = poses[:, 0][:, None] + r[None, :] * np.cos(angles[:, ranged])
        ey = poses[:, 1][:, None] + r[None, :] * np.sin(angles[:, ranged])
        emx, emy = m.to_map_frame(ex, ey)
        eix = np.floor(emx / m.resolution).astype(np.int64)
        eiy = np.floor(emy / m.resolution).astype(np.int64)
        valid = (eix >= 0) & (eix < m.width) & (eiy >= 0) & (eiy < m.height)
        cix = np.clip(eix, 0, m.width - 1)
        ciy = np.clip(eiy, 0, m.height - 1)
        delta = fields.range_field.costs[ciy, cix] * m.resolution
        p_range = np.exp(-(delta * delta) / (2.0 * cfg.sigma_o * cfg.sigma_o))
        cost = np.empty_like(delta)
        for col, e in enumerate(ranged):
            fid = int(prep.snapped[e])
            cost[:, col] = fields.spectral_fields[fid].costs[ciy[:, col], cix[:, col]]
        p_mat = np.exp(-(cost * cost) / fields.metric.scale)
        combined = np.maximum(MISS_FLOOR, cfg.eps_range * p_range + cfg.eps_material * p_mat)
        beam_like[:, ranged] = np.where(valid, combined, MISS_FLOOR)

    for e in np.nonzero(~has_range)[0]:
        hit, _, hix, hiy = worldmap.raycast_many(
            m, poses[:, 0], poses[:, 1], angles[:, e], cfg.max_range)
        fid = int(prep.snapped[e])
        cost = np.zeros(n)
        cost[hit] = fields.spectral_fields[fid].costs[hiy[hit], hix[hit]]
        p_mat = np.maximum(MISS_FLOOR, np.exp(-(cost * cost) / fields.metric.scale))
        beam_like[:, e] = np.where(hit, p_mat, MISS_FLOOR)

    out = np.sum(np.log(beam_like), axis=1)
    out[~alive] = -np.inf
    return out
