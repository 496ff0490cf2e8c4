"""Material floorplans, chamfer cost fields and grid raycasting.

Grids are stored row-major with cell (ix, iy) at array[iy, ix]; iy grows with
world y. Occupancy images use the usual top-row-first orientation and are
flipped on load/save. Maps and fields are immutable after construction and
safe for concurrent read-only use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import spectral
from .errors import EmptyMap, MapMismatch, OutOfBounds, UnknownMaterial
from .motion import Pose2
from .spectral import MetricKind, SimilarityMetric, Spectrum, prepare_for_metric, spectrum_distance

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

# Occupancy-image thresholds, fractions of the 8-bit range.
_OCCUPIED_BELOW = 0.196
_FREE_ABOVE = 0.65

_DIAG = math.sqrt(2.0)
NO_MATERIAL = -1
_NO_MATERIAL_PIXEL = 255


@dataclass(eq=False)
class MaterialMap:
    """Occupancy grid whose occupied cells carry a library spectrum each."""

    occupancy: np.ndarray
    material_id: np.ndarray
    library: list[Spectrum]
    resolution: float
    origin: Pose2 = field(default_factory=lambda: Pose2(0.0, 0.0, 0.0))
    material_names: list[str] | None = None

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=np.uint8)
        mat = np.array(self.material_id, dtype=np.int32)
        if occ.ndim != 2:
            raise MapMismatch("occupancy must be a 2-D grid")
        if mat.shape != occ.shape:
            raise MapMismatch(f"material grid {mat.shape} != occupancy grid {occ.shape}")
        if not (self.resolution > 0.0):
            raise MapMismatch("resolution must be positive")
        n_lib = len(self.library)
        occupied = occ == OCCUPIED
        ids = mat[occupied]
        if occupied.any():
            if ids.min() < 0 or ids.max() >= n_lib:
                bad = ids[(ids < 0) | (ids >= n_lib)][0]
                raise UnknownMaterial(f"occupied cell has material id {bad}, library size {n_lib}")
        mat = np.where(occupied, mat, NO_MATERIAL)
        occ.setflags(write=False)
        mat.setflags(write=False)
        self.occupancy = occ
        self.material_id = mat
        self.resolution = float(self.resolution)

    @property
    def height(self) -> int:
        return int(self.occupancy.shape[0])

    @property
    def width(self) -> int:
        return int(self.occupancy.shape[1])

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def to_map_frame(self, x, y):
        """World coordinates -> map-frame metric coordinates."""
        c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
        ex, ey = np.asarray(x) - self.origin.x, np.asarray(y) - self.origin.y
        return c * ex + s * ey, -s * ex + c * ey

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        mx, my = self.to_map_frame(x, y)
        return int(math.floor(mx / self.resolution)), int(math.floor(my / self.resolution))

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        mx = (ix + 0.5) * self.resolution
        my = (iy + 0.5) * self.resolution
        c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
        return self.origin.x + c * mx - s * my, self.origin.y + s * mx + c * my

    def is_free_world(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        return self.in_bounds(ix, iy) and self.occupancy[iy, ix] == FREE

    def free_cells(self) -> np.ndarray:
        """(n, 2) array of (ix, iy) for every free cell."""
        iy, ix = np.nonzero(self.occupancy == FREE)
        return np.column_stack([ix, iy])

    def occupied_cells(self) -> np.ndarray:
        iy, ix = np.nonzero(self.occupancy == OCCUPIED)
        return np.column_stack([ix, iy])


@dataclass(frozen=True, eq=False)
class ChamferField:
    """Per-cell minimum cost to (material-weighted) occupied space."""

    costs: np.ndarray
    provenance: str

    def __post_init__(self):
        costs = np.array(self.costs, dtype=float)
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)


@dataclass(frozen=True)
class RayHit:
    range_m: float
    cell: tuple[int, int]
    material_id: int | None


def _chamfer_two_pass(costs: np.ndarray) -> np.ndarray:
    """Exact generalized chamfer transform for the 3x3 (1, sqrt 2) mask.

    costs holds per-cell seed values (inf for non-seeds); two sweeps settle
    the minimum of seed cost plus chamfer path length over all seeds.
    """
    c = np.array(costs, dtype=float)
    h, w = c.shape
    idx = np.arange(w, dtype=float)
    inf = np.inf

    for r in range(h):
        row = c[r]
        if r > 0:
            up = c[r - 1]
            row = np.minimum(row, up + 1.0)
            row = np.minimum(row, np.concatenate(([inf], up[:-1] + _DIAG)))
            row = np.minimum(row, np.concatenate((up[1:] + _DIAG, [inf])))
        # left-to-right horizontal relaxation: min_j<=i (row_j + (i - j))
        row = np.minimum.accumulate(row - idx) + idx
        c[r] = row

    for r in range(h - 1, -1, -1):
        row = c[r]
        if r < h - 1:
            down = c[r + 1]
            row = np.minimum(row, down + 1.0)
            row = np.minimum(row, np.concatenate(([inf], down[:-1] + _DIAG)))
            row = np.minimum(row, np.concatenate((down[1:] + _DIAG, [inf])))
        row = row[::-1]
        row = np.minimum.accumulate(row - idx) + idx
        c[r] = row[::-1]

    return c


def build_range_chamfer(m: MaterialMap) -> ChamferField:
    """Chamfer distance (cell units) to the nearest occupied cell."""
    occupied = m.occupancy == OCCUPIED
    if not occupied.any():
        raise EmptyMap("chamfer field needs at least one occupied cell")
    seeds = np.where(occupied, 0.0, np.inf)
    return ChamferField(_chamfer_two_pass(seeds), "range")


def build_spectral_chamfer(m: MaterialMap, metric: SimilarityMetric, observed: Spectrum,
                           cell_spectra: list[Spectrum] | None = None) -> ChamferField:
    """Chamfer field whose seeds also pay the spectral distance to `observed`.

    Each occupied cell is seeded with the metric distance between the
    observed spectrum and that cell's spectrum; propagation adds the usual
    (1, sqrt 2) step costs, so the field value is the cheapest combination of
    walking to an occupied cell and mismatching its material.
    """
    occupied = m.occupancy == OCCUPIED
    if not occupied.any():
        raise EmptyMap("chamfer field needs at least one occupied cell")
    sources = cell_spectra if cell_spectra is not None else m.library
    if len(sources) != len(m.library):
        raise MapMismatch("cell_spectra must have one entry per library spectrum")
    obs = prepare_for_metric(observed, metric.kind)
    per_material = np.array(
        [spectrum_distance(obs, prepare_for_metric(s, metric.kind), metric) for s in sources]
    )
    seeds = np.full(m.occupancy.shape, np.inf)
    seeds[occupied] = per_material[m.material_id[occupied]]
    return ChamferField(_chamfer_two_pass(seeds), f"spectral:{metric.kind.value}")


def raycast_many(m: MaterialMap, xs: np.ndarray, ys: np.ndarray, angles: np.ndarray,
                 max_range: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cast rays from world points along world angles until blocked.

    Walks every cell each ray crosses (exact grid traversal). Occupied and
    unknown cells both block. Returns (hit, range, ix, iy); rays starting
    outside the map simply miss.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    n = xs.size
    res = m.resolution
    blocking = m.occupancy != FREE

    mx, my = m.to_map_frame(xs, ys)
    a = angles - m.origin.theta
    u = mx / res
    v = my / res
    ix = np.floor(u).astype(np.int64)
    iy = np.floor(v).astype(np.int64)
    dirx = np.cos(a)
    diry = np.sin(a)

    with np.errstate(divide="ignore", invalid="ignore"):
        tdx = np.where(dirx != 0.0, res / np.abs(dirx), np.inf)
        tdy = np.where(diry != 0.0, res / np.abs(diry), np.inf)
        fx = u - ix
        fy = v - iy
        tmx = np.where(dirx > 0.0, (1.0 - fx) * tdx, fx * tdx)
        tmx = np.where(dirx != 0.0, tmx, np.inf)
        tmy = np.where(diry > 0.0, (1.0 - fy) * tdy, fy * tdy)
        tmy = np.where(diry != 0.0, tmy, np.inf)
    stepx = np.where(dirx > 0.0, 1, -1).astype(np.int64)
    stepy = np.where(diry > 0.0, 1, -1).astype(np.int64)

    hit = np.zeros(n, dtype=bool)
    rng_out = np.full(n, np.nan)
    t_entry = np.zeros(n)
    active = (ix >= 0) & (ix < m.width) & (iy >= 0) & (iy < m.height)

    max_steps = m.width + m.height + 2
    for _ in range(max_steps):
        live = np.nonzero(active)[0]
        if live.size == 0:
            break
        blocked = blocking[iy[live], ix[live]]
        found = live[blocked]
        hit[found] = True
        rng_out[found] = t_entry[found]
        active[found] = False
        live = live[~blocked]
        if live.size == 0:
            break

        use_x = tmx[live] <= tmy[live]
        t_next = np.where(use_x, tmx[live], tmy[live])
        done = t_next > max_range
        active[live[done]] = False
        live = live[~done]
        if live.size == 0:
            break
        use_x = use_x[~done]
        t_entry[live] = np.where(use_x, tmx[live], tmy[live])
        ix[live] += np.where(use_x, stepx[live], 0)
        iy[live] += np.where(use_x, 0, stepy[live])
        tmx[live] += np.where(use_x, tdx[live], 0.0)
        tmy[live] += np.where(use_x, 0.0, tdy[live])
        out = (ix[live] < 0) | (ix[live] >= m.width) | (iy[live] < 0) | (iy[live] >= m.height)
        active[live[out]] = False

    return hit, rng_out, ix, iy


def raycast(m: MaterialMap, pose: Pose2, bearing: float, max_range: float) -> RayHit | None:
    """First blocked cell along pose.theta + bearing, with entry range in meters."""
    cx, cy = m.world_to_cell(pose.x, pose.y)
    if not m.in_bounds(cx, cy):
        raise OutOfBounds(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside the map")
    hit, rng, ix, iy = raycast_many(
        m, np.array([pose.x]), np.array([pose.y]),
        np.array([pose.theta + bearing]), max_range,
    )
    if not hit[0]:
        return None
    mat = int(m.material_id[iy[0], ix[0]])
    return RayHit(float(rng[0]), (int(ix[0]), int(iy[0])), None if mat < 0 else mat)


def _occupancy_from_pixels(pixels: np.ndarray) -> np.ndarray:
    occ = np.full(pixels.shape, UNKNOWN, dtype=np.uint8)
    occ[pixels < _OCCUPIED_BELOW * 255.0] = OCCUPIED
    occ[pixels > _FREE_ABOVE * 255.0] = FREE
    return occ


def _pixels_from_occupancy(occ: np.ndarray) -> np.ndarray:
    pixels = np.full(occ.shape, 128, dtype=np.uint8)
    pixels[occ == OCCUPIED] = 0
    pixels[occ == FREE] = 254
    return pixels


def _read_material_grid(path: Path, shape: tuple[int, int]) -> np.ndarray:
    mat = np.full(shape, NO_MATERIAL, dtype=np.int32)
    if path.suffix.lower() == ".csv":
        for lineno, line in enumerate(path.read_text().splitlines()):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise MapMismatch(f"{path}:{lineno + 1}: expected `i,j,material_id`")
            ix, iy, mid = int(parts[0]), int(parts[1]), int(parts[2])
            if not (0 <= ix < shape[1] and 0 <= iy < shape[0]):
                raise MapMismatch(f"{path}:{lineno + 1}: cell ({ix}, {iy}) outside grid")
            mat[iy, ix] = mid
    else:
        img = np.flipud(np.asarray(Image.open(path).convert("L"), dtype=np.int32))
        if img.shape != shape:
            raise MapMismatch(f"material image {img.shape} != occupancy {shape}")
        mat = np.where(img == _NO_MATERIAL_PIXEL, NO_MATERIAL, img)
    return mat


def load_map(occupancy_path: str | Path, material_path: str | Path,
             library_path: str | Path, resolution: float,
             origin: Pose2 | None = None) -> MaterialMap:
    """Assemble a MaterialMap from its three component files.

    The occupancy image is 8-bit grayscale; pixels below 19.6% of the range
    are occupied, above 65% free, anything between unknown. The material
    index is either a CSV of `i,j,material_id` rows or a same-size indexed
    image (pixel 255 meaning no material).
    """
    occupancy_path = Path(occupancy_path)
    pixels = np.flipud(np.asarray(Image.open(occupancy_path).convert("L"), dtype=float))
    occ = _occupancy_from_pixels(pixels)
    mat = _read_material_grid(Path(material_path), occ.shape)
    library, names = spectral.read_library(library_path)
    missing = (occ == OCCUPIED) & (mat == NO_MATERIAL)
    if missing.any():
        iy, ix = np.argwhere(missing)[0]
        raise UnknownMaterial(f"occupied cell ({ix}, {iy}) has no material entry")
    return MaterialMap(occ, mat, library, resolution,
                       origin or Pose2(0.0, 0.0, 0.0), names)


def save_map(m: MaterialMap, out_dir: str | Path) -> Path:
    """Write occupancy.pgm, materials.csv, library.spectra and map.meta."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.flipud(_pixels_from_occupancy(m.occupancy))).save(out / "occupancy.pgm")
    rows = []
    for iy, ix in np.argwhere(m.material_id >= 0):
        rows.append(f"{ix},{iy},{m.material_id[iy, ix]}")
    (out / "materials.csv").write_text("\n".join(rows) + ("\n" if rows else ""))
    spectral.write_library(out / "library.spectra", m.library, m.material_names)
    meta = "\n".join([
        f"resolution {m.resolution!r}",
        f"origin_x {m.origin.x!r}",
        f"origin_y {m.origin.y!r}",
        f"origin_theta {m.origin.theta!r}",
        "occupancy occupancy.pgm",
        "materials materials.csv",
        "library library.spectra",
    ])
    (out / "map.meta").write_text(meta + "\n")
    return out / "map.meta"


def load_map_meta(meta_path: str | Path) -> MaterialMap:
    """Load a map from its metadata file (or a directory containing map.meta)."""
    meta_path = Path(meta_path)
    if meta_path.is_dir():
        meta_path = meta_path / "map.meta"
    if not meta_path.is_file():
        raise MapMismatch(f"map metadata not found: {meta_path}")
    fields: dict[str, str] = {}
    for line in meta_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    required = {"resolution", "origin_x", "origin_y", "origin_theta",
                "occupancy", "materials", "library"}
    missing = required - fields.keys()
    if missing:
        raise MapMismatch(f"map metadata missing fields: {sorted(missing)}")
    base = meta_path.parent
    return load_map(
        base / fields["occupancy"],
        base / fields["materials"],
        base / fields["library"],
        resolution=float(fields["resolution"]),
        origin=Pose2(float(fields["origin_x"]), float(fields["origin_y"]),
                     float(fields["origin_theta"])),
    )
