"""Synthetic worlds, scripted trajectories and sensor-log generation.

All randomness flows from explicit seeds; regenerating a dataset with the
same seed is bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleSpec, InvalidPose, InvalidScript
from .evaluate import TrajectoryLog
from .motion import MotionNoise, OdometryDelta, Pose2, relative_delta, wrap_angle
from .sensing import ScanEntry, ScanTuple
from .spectral import (
    DEFAULT_GRID_START,
    DEFAULT_GRID_STEP,
    DEFAULT_N_BINS,
    DEFAULT_NOISE,
    NoiseConfig,
    Spectrum,
    apply_sensor_noise,
    read_library,
)
from .worldmap import FREE, OCCUPIED, UNKNOWN, MaterialMap, raycast

CORRIDOR_LOOP = "corridor_loop"
ROOMS = "rooms"
SYMMETRIC_TWIN = "symmetric_twin"

PER_WALL_SEGMENT = "per_wall_segment"
RANDOM_PATCHES = "random_patches"

_BANDS_PER_MATERIAL = 8


@dataclass(frozen=True)
class WorldSpec:
    layout: str = CORRIDOR_LOOP
    size: int = 64
    resolution: float = 0.05
    n_materials: int = 5
    material_assignment: str = PER_WALL_SEGMENT
    library_path: str | None = None
    segment_length: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.layout not in (CORRIDOR_LOOP, ROOMS, SYMMETRIC_TWIN):
            raise InfeasibleSpec(f"unknown layout {self.layout!r}")
        if self.material_assignment not in (PER_WALL_SEGMENT, RANDOM_PATCHES):
            raise InfeasibleSpec(f"unknown assignment {self.material_assignment!r}")
        if self.size < 8:
            raise InfeasibleSpec("size must be at least 8 cells")
        if self.n_materials < 1:
            raise InfeasibleSpec("need at least one material")
        if self.n_materials > self.size * self.size:
            raise InfeasibleSpec("more materials than cells")


@dataclass(frozen=True)
class TrajectoryScript:
    """Waypoints driven at constant speed, rotating in place between legs."""

    waypoints: tuple[Pose2, ...]
    speed: float = 0.5
    angular_speed: float = 1.0
    scan_period: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if not self.waypoints:
            raise InvalidScript("script needs at least one waypoint")
        if self.speed <= 0 or self.angular_speed <= 0 or self.scan_period <= 0:
            raise InvalidScript("speed, angular_speed and scan_period must be positive")


@dataclass(frozen=True)
class SensorTruthConfig:
    k_beams: int = 16
    max_range: float = 2.0
    range_sigma: float = 0.02
    # fraction of beams whose range reading is a short return (clutter or
    # passers-by in front of the wall); the spectrum still comes from the
    # true hit, so only the range channel is corrupted
    range_outlier_prob: float = 0.1
    noise: NoiseConfig = field(default_factory=lambda: DEFAULT_NOISE)
    odom_noise: MotionNoise = field(default_factory=lambda: MotionNoise.from_stds(0.01, 0.01, 0.01))

    def __post_init__(self):
        if self.k_beams < 1:
            raise ValueError("k_beams must be >= 1")
        if not (0.0 <= self.range_outlier_prob <= 1.0):
            raise ValueError("range_outlier_prob must be in [0, 1]")

    @property
    def spectrum_noise_enabled(self) -> bool:
        n = self.noise
        return n.shot_scale > 0 or n.read_sigma > 0 or n.baseline_coeffs_sigma > 0


@dataclass
class LogRecord:
    t: float
    odom: OdometryDelta
    scan: ScanTuple


def synthetic_library(n_materials: int, seed: int, n_bins: int = DEFAULT_N_BINS,
                      grid_start: float = DEFAULT_GRID_START,
                      grid_step: float = DEFAULT_GRID_STEP) -> list[Spectrum]:
    """Gaussian-peak spectra with per-material disjoint peak sub-bands.

    Each material owns a set of sub-bands of the wavenumber axis and draws
    3..8 peaks inside them, so any two materials keep separable signatures.
    """
    rng = np.random.default_rng(seed)
    n_bands = n_materials * _BANDS_PER_MATERIAL
    if n_bands > n_bins // 2:
        n_bands = max(n_materials, n_bins // 2)
    band_edges = np.linspace(0, n_bins, n_bands + 1)
    order = rng.permutation(n_bands)
    idx = np.arange(n_bins, dtype=float)
    library = []
    for mat in range(n_materials):
        bands = order[mat::n_materials]
        # 5..7 peaks: enough structure to fingerprint, and similar enough
        # mass across materials that pairwise distances stay comparable
        n_peaks = int(rng.integers(5, 8))
        n_peaks = min(n_peaks, bands.size)
        chosen = rng.choice(bands, size=n_peaks, replace=False)
        y = np.zeros(n_bins)
        for b in chosen:
            lo, hi = band_edges[b], band_edges[b + 1]
            center = lo + (0.25 + 0.5 * rng.random()) * (hi - lo)
            sigma = 1.5 + 2.5 * rng.random()
            height = 0.3 + 0.7 * rng.random()
            y += height * np.exp(-((idx - center) ** 2) / (2.0 * sigma * sigma))
        library.append(Spectrum(grid_start, grid_step, y))
    return library


def _corridor_block(s: int) -> tuple[int, int, int, int]:
    """Inner block bounds (bx0, bx1, by0, by1) for the asymmetric corridor loop."""
    return (5 * s) // 32, (45 * s) // 64, (7 * s) // 32, (41 * s) // 64


def _hollow_block(occ: np.ndarray, x0: int, x1: int, y0: int, y1: int) -> None:
    occ[y0, x0:x1 + 1] = OCCUPIED
    occ[y1, x0:x1 + 1] = OCCUPIED
    occ[y0:y1 + 1, x0] = OCCUPIED
    occ[y0:y1 + 1, x1] = OCCUPIED
    occ[y0 + 1:y1, x0 + 1:x1] = UNKNOWN


def _layout_occupancy(spec: WorldSpec) -> np.ndarray:
    s = spec.size
    occ = np.full((s, s), FREE, dtype=np.uint8)
    occ[0, :] = OCCUPIED
    occ[-1, :] = OCCUPIED
    occ[:, 0] = OCCUPIED
    occ[:, -1] = OCCUPIED

    if spec.layout == SYMMETRIC_TWIN:
        # four identical sealed ring-rooms; geometry cannot tell them apart
        q = s // 2
        for oy in (0, q):
            for ox in (0, q):
                occ[oy, ox:ox + q] = OCCUPIED
                occ[oy + q - 1, ox:ox + q] = OCCUPIED
                occ[oy:oy + q, ox] = OCCUPIED
                occ[oy:oy + q, ox + q - 1] = OCCUPIED
                m = q // 4
                _hollow_block(occ, ox + m, ox + q - 1 - m, oy + m, oy + q - 1 - m)
    elif spec.layout == CORRIDOR_LOOP:
        # off-centre block gives every corridor side a distinct width, plus
        # a notch and a wall stub as local geometric landmarks
        bx0, bx1, by0, by1 = _corridor_block(s)
        _hollow_block(occ, bx0, bx1, by0, by1)
        ny = (by0 + by1) // 2
        occ[ny:ny + max(2, s // 16), bx1:bx1 + max(2, s // 21)] = OCCUPIED
        occ[s - 1 - max(2, s // 21):s - 1, s // 3] = OCCUPIED
    else:  # rooms
        mid = s // 2
        q, tq = s // 4, (3 * s) // 4
        occ[mid, :] = OCCUPIED
        occ[:, mid] = OCCUPIED
        for door in (q, tq):
            occ[mid, door - 1:door + 2] = FREE
            occ[door - 1:door + 2, mid] = FREE
    return occ


def _ordered_components(occ: np.ndarray) -> list[list[tuple[int, int]]]:
    """Occupied cells grouped by 8-connected component, each in a DFS walk order."""
    h, w = occ.shape
    seen = np.zeros_like(occ, dtype=bool)
    components = []
    neighbors = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)]
    for iy in range(h):
        for ix in range(w):
            if occ[iy, ix] != OCCUPIED or seen[iy, ix]:
                continue
            stack = [(ix, iy)]
            seen[iy, ix] = True
            walk = []
            while stack:
                cx, cy = stack.pop()
                walk.append((cx, cy))
                for dx, dy in neighbors:
                    nx, ny = cx + dx, cy + dy
                    if 0 <= nx < w and 0 <= ny < h and occ[ny, nx] == OCCUPIED and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((nx, ny))
            components.append(walk)
    return components


def _assign_materials(occ: np.ndarray, spec: WorldSpec,
                      rng: np.random.Generator) -> np.ndarray:
    mats = np.full(occ.shape, -1, dtype=np.int32)
    n_occupied = int((occ == OCCUPIED).sum())
    if n_occupied < spec.n_materials:
        raise InfeasibleSpec(
            f"{spec.n_materials} materials cannot all appear on {n_occupied} occupied cells")

    segments: list[list[tuple[int, int]]] = []
    if spec.material_assignment == PER_WALL_SEGMENT:
        for walk in _ordered_components(occ):
            for start in range(0, len(walk), spec.segment_length):
                segments.append(walk[start:start + spec.segment_length])
    else:
        tile = max(2, spec.segment_length // 2)
        buckets: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for iy, ix in np.argwhere(occ == OCCUPIED):
            buckets.setdefault((ix // tile, iy // tile), []).append((int(ix), int(iy)))
        segments = [buckets[k] for k in sorted(buckets)]

    if len(segments) < spec.n_materials:
        raise InfeasibleSpec(
            f"layout yields {len(segments)} wall segments, fewer than "
            f"{spec.n_materials} materials")

    ids = rng.integers(0, spec.n_materials, len(segments))
    # guarantee every material appears at least once
    for missing in sorted(set(range(spec.n_materials)) - set(ids.tolist())):
        counts = np.bincount(ids, minlength=spec.n_materials)
        for k in range(len(ids)):
            if counts[ids[k]] > 1:
                counts[ids[k]] -= 1
                ids[k] = missing
                break
    for seg, mid in zip(segments, ids):
        for ix, iy in seg:
            mats[iy, ix] = mid

    if spec.layout == SYMMETRIC_TWIN:
        rotated = mats[::-1, ::-1]
        if np.array_equal(mats, rotated):
            ix, iy = segments[0][0]
            bumped = (mats[iy, ix] + 1) % spec.n_materials
            for cx, cy in segments[0]:
                mats[cy, cx] = bumped
    return mats


def generate_world(spec: WorldSpec) -> MaterialMap:
    """Deterministically build a closed material floorplan from a spec."""
    ss = np.random.SeedSequence(spec.seed)
    assign_seed, library_seed = ss.spawn(2)
    occ = _layout_occupancy(spec)
    mats = _assign_materials(occ, spec, np.random.default_rng(assign_seed))
    if spec.library_path is not None:
        library, names = read_library(spec.library_path)
        if len(library) < spec.n_materials:
            raise InfeasibleSpec(
                f"library holds {len(library)} spectra, spec wants {spec.n_materials}")
    else:
        library = synthetic_library(spec.n_materials,
                                    int(library_seed.generate_state(1)[0]))
        names = [f"material_{i}" for i in range(spec.n_materials)]
    return MaterialMap(occ, mats, library, spec.resolution,
                       Pose2(0.0, 0.0, 0.0), names)


def default_script(spec: WorldSpec, speed: float = 0.5, angular_speed: float = 1.0,
                   scan_period: float = 0.25) -> TrajectoryScript:
    """A rectangular patrol loop along the layout's corridor centrelines."""
    s = spec.size
    res = spec.resolution

    def centre(cell: float) -> float:
        return (cell + 0.5) * res

    if spec.layout == SYMMETRIC_TWIN:
        # patrol the lower-left room's corridor ring
        q = s // 2
        m = q // 4
        lo = centre(m / 2.0)
        hi = centre(q - 1 - m / 2.0)
        corners = [(lo, lo), (hi, lo), (hi, hi), (lo, hi)]
    elif spec.layout == CORRIDOR_LOOP:
        bx0, bx1, by0, by1 = _corridor_block(s)
        left = centre((1 + bx0 - 1) / 2.0)
        right = centre((bx1 + 1 + s - 2) / 2.0)
        bottom = centre((1 + by0 - 1) / 2.0)
        top = centre((by1 + 1 + s - 2) / 2.0)
        corners = [(left, bottom), (right, bottom), (right, top), (left, top)]
    else:
        q, tq = s // 4, (3 * s) // 4
        lo, hi = centre(q), centre(tq)
        corners = [(lo, lo), (hi, lo), (hi, hi), (lo, hi)]
    # start mid-leg rather than in a corner and drive one full lap
    (x0, y0), (x1, y1) = corners[0], corners[1]
    mid = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    loop = [mid, corners[1], corners[2], corners[3], corners[0], mid]
    waypoints = [Pose2(x, y, 0.0) for x, y in loop]
    return TrajectoryScript(tuple(waypoints), speed, angular_speed, scan_period)


def _script_segments(script: TrajectoryScript):
    """Expand waypoints into (duration, pose_fn) legs: turn in place, then drive."""
    segments = []
    pose = script.waypoints[0]
    for target in script.waypoints[1:]:
        dx, dy = target.x - pose.x, target.y - pose.y
        dist = math.hypot(dx, dy)
        if dist < 1e-12:
            continue
        heading = math.atan2(dy, dx)
        turn = wrap_angle(heading - pose.theta)
        if abs(turn) > 1e-12:
            dur = abs(turn) / script.angular_speed
            segments.append((dur, _turn_fn(pose, turn, dur)))
            pose = Pose2(pose.x, pose.y, heading)
        dur = dist / script.speed
        segments.append((dur, _drive_fn(pose, dx, dy, dur)))
        pose = Pose2(target.x, target.y, heading)
    return segments, pose


def _turn_fn(start: Pose2, turn: float, duration: float):
    def at(t: float) -> Pose2:
        return Pose2(start.x, start.y, start.theta + turn * (t / duration))
    return at


def _drive_fn(start: Pose2, dx: float, dy: float, duration: float):
    def at(t: float) -> Pose2:
        f = t / duration
        return Pose2(start.x + f * dx, start.y + f * dy, start.theta)
    return at


def _pose_at(segments, start: Pose2, end: Pose2, t: float) -> Pose2:
    remaining = t
    for duration, fn in segments:
        if remaining <= duration:
            return fn(remaining)
        remaining -= duration
    return end


def _validate_script(m: MaterialMap, script: TrajectoryScript) -> None:
    for wp in script.waypoints:
        if not m.is_free_world(wp.x, wp.y):
            raise InvalidScript(f"waypoint ({wp.x:.3f}, {wp.y:.3f}) is not in free space")
    for a, b in zip(script.waypoints, script.waypoints[1:]):
        dist = math.hypot(b.x - a.x, b.y - a.y)
        if dist < 1e-12:
            continue
        heading = math.atan2(b.y - a.y, b.x - a.x)
        hit = raycast(m, Pose2(a.x, a.y, heading), 0.0, dist)
        if hit is not None:
            raise InvalidScript(
                f"leg ({a.x:.2f},{a.y:.2f})->({b.x:.2f},{b.y:.2f}) blocked at {hit.range_m:.2f} m")


def simulate_step(m: MaterialMap, true_pose: Pose2, true_delta: OdometryDelta,
                  cfg: SensorTruthConfig, seed) -> tuple[OdometryDelta, ScanTuple]:
    """Noisy odometry reading for the step plus one scan taken at true_pose.

    Beams are evenly spaced over the full turn; beams that hit nothing (or a
    material-less cell) are left out of the tuple.
    """
    cix, ciy = m.world_to_cell(true_pose.x, true_pose.y)
    if not m.in_bounds(cix, ciy) or m.occupancy[ciy, cix] != FREE:
        raise InvalidPose(f"({true_pose.x:.3f}, {true_pose.y:.3f}) is not free space")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    odom_ss, range_ss, spectra_ss = ss.spawn(3)

    odom_rng = np.random.default_rng(odom_ss)
    noise_sample = cfg.odom_noise.factor @ odom_rng.standard_normal(3)
    odom = OdometryDelta(true_delta.dx + noise_sample[0],
                         true_delta.dy + noise_sample[1],
                         true_delta.dtheta + noise_sample[2])

    range_rng = np.random.default_rng(range_ss)
    spectrum_seeds = spectra_ss.generate_state(cfg.k_beams)
    entries = []
    for k in range(cfg.k_beams):
        bearing = -math.pi + (k + 0.5) * (2.0 * math.pi / cfg.k_beams)
        hit = raycast(m, true_pose, bearing, cfg.max_range)
        r_noise = float(range_rng.normal(0.0, cfg.range_sigma)) if cfg.range_sigma > 0 else 0.0
        outlier = (cfg.range_outlier_prob > 0.0
                   and float(range_rng.random()) < cfg.range_outlier_prob)
        if hit is None or hit.material_id is None:
            continue
        if outlier:
            r = hit.range_m * float(range_rng.uniform(0.2, 0.9))
        else:
            r = min(max(hit.range_m + r_noise, 1e-6), cfg.max_range)
        source = m.library[hit.material_id]
        if cfg.spectrum_noise_enabled:
            noisy = apply_sensor_noise(
                source, replace(cfg.noise, rng_seed=int(spectrum_seeds[k])))
            entries.append(ScanEntry(bearing, noisy, r, None))
        else:
            entries.append(ScanEntry(bearing, source, r, hit.material_id))
    return odom, ScanTuple(tuple(entries), 0.0)


def generate_dataset(m: MaterialMap, script: TrajectoryScript, cfg: SensorTruthConfig,
                     seed: int) -> tuple[TrajectoryLog, list[LogRecord]]:
    """Drive the script, record ground truth plus (odometry, scan) per period."""
    _validate_script(m, script)
    segments, end_pose = _script_segments(script)
    total = sum(d for d, _ in segments)
    n_records = int(math.floor(total / script.scan_period + 1e-9)) + 1

    times = [i * script.scan_period for i in range(n_records)]
    gt_poses = [_pose_at(segments, script.waypoints[0], end_pose, t) for t in times]

    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n_records)
    records = []
    prev = gt_poses[0]
    for i, (t, pose) in enumerate(zip(times, gt_poses)):
        delta = relative_delta(prev, pose) if i > 0 else OdometryDelta(0.0, 0.0, 0.0)
        odom, scan = simulate_step(m, pose, delta, cfg, children[i])
        records.append(LogRecord(t, odom, ScanTuple(scan.entries, t)))
        prev = pose
    gt = TrajectoryLog.from_poses(list(zip(times, gt_poses)))
    return gt, records


def write_scan_log(path: str | Path, records: list[LogRecord]) -> None:
    """Line-delimited records; spectra stored as library ids when noise-free."""
    lines = []
    for rec in records:
        beams = []
        for e in rec.scan.entries:
            beam: dict = {"bearing": e.bearing}
            if e.range_m is not None:
                beam["range"] = e.range_m
            if e.spectrum_id is not None:
                beam["spectrum_id"] = e.spectrum_id
            else:
                beam["intensities"] = [float(v) for v in e.spectrum.intensities]
            beams.append(beam)
        lines.append(json.dumps({
            "t": rec.t,
            "odom": {"dx": rec.odom.dx, "dy": rec.odom.dy, "dtheta": rec.odom.dtheta},
            "scan": beams,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_scan_log(path: str | Path, library: list[Spectrum]) -> list[LogRecord]:
    """Inverse of write_scan_log; library resolves stored spectrum ids and grids."""
    grid = library[0]
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        entries = []
        for beam in obj["scan"]:
            if "spectrum_id" in beam:
                sid = int(beam["spectrum_id"])
                spectrum = library[sid]
            else:
                sid = None
                spectrum = Spectrum(grid.grid_start, grid.grid_step,
                                    np.array(beam["intensities"], dtype=float))
            entries.append(ScanEntry(float(beam["bearing"]), spectrum,
                                     beam.get("range"), sid))
        odom = OdometryDelta(**obj["odom"])
        records.append(LogRecord(float(obj["t"]), odom,
                                 ScanTuple(tuple(entries), float(obj["t"]))))
    return records
