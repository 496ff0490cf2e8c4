import heapq
import math

import numpy as np
import pytest

from spectral_mcl import sim
from spectral_mcl.errors import EmptyMap, MapMismatch, OutOfBounds, UnknownMaterial
from spectral_mcl.motion import Pose2
from spectral_mcl.spectral import MetricKind, SimilarityMetric, Spectrum
from spectral_mcl.worldmap import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    MaterialMap,
    build_range_chamfer,
    build_spectral_chamfer,
    load_map,
    load_map_meta,
    raycast,
    raycast_many,
    save_map,
)

# exact worst-case overestimate of the (1, sqrt 2) chamfer mask vs Euclid
CHAMFER_BOUND = math.sqrt(4.0 - 2.0 * math.sqrt(2.0)) - 1.0

DIAG = math.sqrt(2.0)


def tiny_library(n=2, bins=8):
    lib = []
    for i in range(n):
        y = np.zeros(bins)
        y[i % bins] = 1.0
        y[(i + 3) % bins] = 0.5
        lib.append(Spectrum(200.0, 5.0, y))
    return lib


def grid_map(occ, mats=None, library=None, resolution=0.05):
    occ = np.array(occ, dtype=np.uint8)
    if mats is None:
        mats = np.where(occ == OCCUPIED, 0, -1)
    return MaterialMap(occ, mats, library or tiny_library(), resolution)


def random_map(rng, size=32, density=0.12, n_materials=2):
    occ = np.where(rng.random((size, size)) < density, OCCUPIED, FREE).astype(np.uint8)
    if not (occ == OCCUPIED).any():
        occ[size // 2, size // 2] = OCCUPIED
    mats = np.where(occ == OCCUPIED, rng.integers(0, n_materials, (size, size)), -1)
    return grid_map(occ, mats, tiny_library(n_materials))


# ------------------------------------------------------------- construction

def test_material_map_validation():
    occ = np.full((3, 3), FREE, dtype=np.uint8)
    occ[1, 1] = OCCUPIED
    with pytest.raises(UnknownMaterial):
        MaterialMap(occ, np.full((3, 3), -1), tiny_library(), 0.05)
    with pytest.raises(MapMismatch):
        MaterialMap(occ, np.full((2, 3), -1), tiny_library(), 0.05)
    mats = np.full((3, 3), -1)
    mats[1, 1] = 1
    m = MaterialMap(occ, mats, tiny_library(), 0.05)
    assert m.material_id[1, 1] == 1


def test_world_cell_round_trip():
    m = grid_map(np.full((8, 8), FREE), resolution=0.1)
    x, y = m.cell_center(3, 5)
    assert m.world_to_cell(x, y) == (3, 5)


# ----------------------------------------------------------------- chamfer

def brute_force_euclid(occ):
    h, w = occ.shape
    ys, xs = np.nonzero(occ == OCCUPIED)
    out = np.empty((h, w))
    for iy in range(h):
        for ix in range(w):
            out[iy, ix] = np.sqrt((xs - ix) ** 2 + (ys - iy) ** 2).min()
    return out


def dijkstra_field(occ, seed_costs):
    """Shortest (1, sqrt2) path cost over the 8-connected grid from seeds."""
    h, w = occ.shape
    dist = np.full((h, w), np.inf)
    heap = []
    for iy in range(h):
        for ix in range(w):
            if np.isfinite(seed_costs[iy, ix]):
                dist[iy, ix] = seed_costs[iy, ix]
                heapq.heappush(heap, (dist[iy, ix], ix, iy))
    while heap:
        d, ix, iy = heapq.heappop(heap)
        if d > dist[iy, ix]:
            continue
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = ix + dx, iy + dy
                if not (0 <= nx < w and 0 <= ny < h):
                    continue
                step = DIAG if dx != 0 and dy != 0 else 1.0
                nd = d + step
                if nd < dist[ny, nx]:
                    dist[ny, nx] = nd
                    heapq.heappush(heap, (nd, nx, ny))
    return dist


def test_range_chamfer_basics():
    occ = np.full((5, 5), FREE, dtype=np.uint8)
    occ[2, 2] = OCCUPIED
    field = build_range_chamfer(grid_map(occ)).costs
    assert field[2, 2] == 0.0
    assert field[2, 3] == 1.0
    assert field[1, 2] == 1.0
    assert abs(field[1, 1] - DIAG) < 1e-12
    with pytest.raises(EmptyMap):
        build_range_chamfer(grid_map(np.full((4, 4), FREE)))


def test_range_chamfer_within_bound_of_euclid_and_exact_axial():
    rng = np.random.default_rng(8)
    for _ in range(3):
        m = random_map(rng)
        got = build_range_chamfer(m).costs
        want = brute_force_euclid(m.occupancy)
        mask = want > 0
        rel = (got[mask] - want[mask]) / want[mask]
        assert rel.min() >= -1e-9
        assert rel.max() <= CHAMFER_BOUND + 1e-9
    # axial-only geometry: a single occupied column is exact everywhere
    occ = np.full((6, 6), FREE, dtype=np.uint8)
    occ[:, 0] = OCCUPIED
    got = build_range_chamfer(grid_map(occ)).costs
    want = brute_force_euclid(occ)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_range_chamfer_matches_dijkstra():
    rng = np.random.default_rng(9)
    for _ in range(3):
        m = random_map(rng, size=16)
        seeds = np.where(m.occupancy == OCCUPIED, 0.0, np.inf)
        np.testing.assert_allclose(build_range_chamfer(m).costs,
                                   dijkstra_field(m.occupancy, seeds), atol=1e-9)


def test_spectral_chamfer_zero_cost_seed():
    occ = np.full((5, 5), FREE, dtype=np.uint8)
    occ[2, 2] = OCCUPIED
    lib = tiny_library()
    m = grid_map(occ, library=lib)
    metric = SimilarityMetric(kind=MetricKind.SAM)
    field = build_spectral_chamfer(m, metric, lib[0]).costs
    assert field[2, 2] == 0.0
    assert field[2, 3] >= 1.0 - 1e-12


def test_spectral_chamfer_dominance_of_matching_material():
    occ = np.full((5, 7), FREE, dtype=np.uint8)
    occ[2, 0] = OCCUPIED
    occ[2, 6] = OCCUPIED
    mats = np.full((5, 7), -1)
    mats[2, 0] = 0
    mats[2, 6] = 1
    lib = tiny_library()
    m = grid_map(occ, mats, lib)
    metric = SimilarityMetric(kind=MetricKind.SAM)
    field = build_spectral_chamfer(m, metric, lib[0]).costs
    # wherever the matching cell is spatially closer or equal, it decides
    for ix in range(4):
        assert abs(field[2, ix] - ix) < 1e-12


def test_spectral_chamfer_matches_dijkstra_on_random_maps():
    rng = np.random.default_rng(10)
    lib = tiny_library(2)
    metric = SimilarityMetric(kind=MetricKind.WASSERSTEIN)
    for _ in range(3):
        m = random_map(rng, size=16, n_materials=2)
        obs = lib[int(rng.integers(0, 2))]
        got = build_spectral_chamfer(m, metric, obs).costs
        from spectral_mcl.spectral import normalize_unit_sum, spectrum_distance
        per = [spectrum_distance(normalize_unit_sum(obs), normalize_unit_sum(s), metric)
               for s in lib]
        seeds = np.full(m.occupancy.shape, np.inf)
        occ_mask = m.occupancy == OCCUPIED
        seeds[occ_mask] = np.array(per)[m.material_id[occ_mask]]
        np.testing.assert_allclose(got, dijkstra_field(m.occupancy, seeds), atol=1e-9)


def test_spectral_chamfer_monotone_in_occupancy():
    lib = tiny_library(2)
    metric = SimilarityMetric(kind=MetricKind.SAM)
    occ = np.full((8, 8), FREE, dtype=np.uint8)
    occ[1, 1] = OCCUPIED
    mats = np.where(occ == OCCUPIED, 1, -1)
    base = build_spectral_chamfer(grid_map(occ, mats.copy(), lib), metric, lib[0]).costs
    occ2 = occ.copy()
    occ2[6, 6] = OCCUPIED
    mats2 = np.where(occ2 == OCCUPIED, 1, -1)
    more = build_spectral_chamfer(grid_map(occ2, mats2, lib), metric, lib[0]).costs
    assert np.all(more <= base + 1e-12)


def test_chamfer_lipschitz_neighbours():
    rng = np.random.default_rng(12)
    m = random_map(rng, size=24)
    f = build_range_chamfer(m).costs
    dx = np.abs(np.diff(f, axis=1))
    dy = np.abs(np.diff(f, axis=0))
    assert dx.max() <= 1.0 + 1e-12
    assert dy.max() <= 1.0 + 1e-12


# ----------------------------------------------------------------- raycast

def test_raycast_wall_ahead_range():
    occ = np.full((9, 9), FREE, dtype=np.uint8)
    occ[4, 5] = OCCUPIED  # 4 free cells between pose cell 0 and wall cell 5
    m = grid_map(occ, resolution=0.05)
    pose = Pose2(*m.cell_center(0, 4), 0.0)
    hit = raycast(m, pose, 0.0, 5.0)
    assert hit is not None
    assert hit.cell == (5, 4)
    assert abs(hit.range_m - 0.225) < 1e-9


def test_raycast_fine_step_marching_oracle():
    rng = np.random.default_rng(13)
    m = random_map(rng, size=24)
    blocking = m.occupancy != FREE
    free = np.argwhere(m.occupancy == FREE)
    checked = 0
    for k in range(200):
        iy, ix = free[rng.integers(0, len(free))]
        pose = Pose2(*m.cell_center(ix, iy), 0.0)
        bearing = float(rng.uniform(-math.pi, math.pi))
        hit = raycast(m, pose, bearing, 2.0)
        # brute-force marching at 1/1000 cell
        step = m.resolution / 1000.0
        t = step
        expect = None
        while t <= 2.0:
            ex = pose.x + t * math.cos(bearing)
            ey = pose.y + t * math.sin(bearing)
            cx, cy = m.world_to_cell(ex, ey)
            if not m.in_bounds(cx, cy):
                break
            if blocking[cy, cx]:
                expect = (cx, cy, t)
                break
            t += step
        if expect is None:
            assert hit is None
            continue
        checked += 1
        assert hit is not None
        assert hit.cell == (expect[0], expect[1])
        assert abs(hit.range_m - expect[2]) <= step * 2
    assert checked > 50


def test_raycast_box_analytic_ranges():
    size = 21
    occ = np.full((size, size), FREE, dtype=np.uint8)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = OCCUPIED
    m = grid_map(occ, resolution=0.05)
    cx = cy = size * 0.05 / 2.0
    pose = Pose2(cx, cy, 0.0)
    # analytic distance from the centre to the inner wall faces of the box
    inner = (size - 2) * 0.05 / 2.0
    diag_tol = 0.05 * math.sqrt(2.0)
    for bearing in np.linspace(-math.pi, math.pi, 360, endpoint=False):
        hit = raycast(m, pose, float(bearing), 5.0)
        assert hit is not None
        c, s = abs(math.cos(bearing)), abs(math.sin(bearing))
        analytic = inner / max(c, s)
        assert abs(hit.range_m - analytic) <= diag_tol


def test_raycast_rotation_consistency():
    rng = np.random.default_rng(14)
    m = random_map(rng, size=24)
    free = np.argwhere(m.occupancy == FREE)
    for k in range(100):
        iy, ix = free[rng.integers(0, len(free))]
        x, y = m.cell_center(ix, iy)
        bearing = float(rng.uniform(-math.pi, math.pi))
        dtheta = float(rng.uniform(-math.pi, math.pi))
        h1 = raycast(m, Pose2(x, y, 0.3), bearing, 2.0)
        h2 = raycast(m, Pose2(x, y, 0.3 + dtheta), bearing - dtheta, 2.0)
        if h1 is None:
            assert h2 is None
        else:
            assert h2 is not None and h1.cell == h2.cell


def test_raycast_miss_and_out_of_bounds():
    occ = np.full((6, 6), FREE, dtype=np.uint8)
    occ[0, 0] = OCCUPIED
    m = grid_map(occ, resolution=0.05)
    pose = Pose2(*m.cell_center(4, 4), 0.0)
    assert raycast(m, pose, 0.0, 0.03) is None
    with pytest.raises(OutOfBounds):
        raycast(m, Pose2(-1.0, -1.0, 0.0), 0.0, 1.0)


def test_raycast_unknown_blocks_without_material():
    occ = np.full((5, 5), FREE, dtype=np.uint8)
    occ[2, 4] = UNKNOWN
    m = grid_map(occ)
    pose = Pose2(*m.cell_center(0, 2), 0.0)
    hit = raycast(m, pose, 0.0, 5.0)
    assert hit is not None and hit.material_id is None


def test_raycast_many_matches_scalar():
    rng = np.random.default_rng(15)
    m = random_map(rng, size=24)
    free = np.argwhere(m.occupancy == FREE)
    picks = free[rng.integers(0, len(free), 64)]
    xs, ys, angles = [], [], []
    for iy, ix in picks:
        x, y = m.cell_center(ix, iy)
        xs.append(x)
        ys.append(y)
        angles.append(float(rng.uniform(-math.pi, math.pi)))
    hit, rng_out, hix, hiy = raycast_many(m, np.array(xs), np.array(ys), np.array(angles), 2.0)
    for i in range(len(xs)):
        ref = raycast(m, Pose2(xs[i], ys[i], 0.0), angles[i], 2.0)
        if ref is None:
            assert not hit[i]
        else:
            assert hit[i]
            assert (hix[i], hiy[i]) == ref.cell
            assert rng_out[i] == ref.range_m


# --------------------------------------------------------------------- IO

def test_map_save_load_round_trip(tmp_path, corridor_world):
    meta = save_map(corridor_world, tmp_path / "world")
    again = load_map_meta(meta)
    np.testing.assert_array_equal(again.occupancy, corridor_world.occupancy)
    np.testing.assert_array_equal(again.material_id, corridor_world.material_id)
    assert again.resolution == corridor_world.resolution
    assert again.origin == corridor_world.origin
    for a, b in zip(again.library, corridor_world.library):
        np.testing.assert_array_equal(a.intensities, b.intensities)
    # second round trip is bit-identical on disk
    save_map(again, tmp_path / "world2")
    for name in ("occupancy.pgm", "materials.csv", "library.spectra", "map.meta"):
        assert (tmp_path / "world" / name).read_bytes() == (tmp_path / "world2" / name).read_bytes()


def test_load_map_pixel_count_oracle(tmp_path, corridor_world):
    from PIL import Image
    save_map(corridor_world, tmp_path / "world")
    pixels = np.asarray(Image.open(tmp_path / "world" / "occupancy.pgm").convert("L"))
    n_occupied = int((pixels < 0.196 * 255).sum())
    n_free = int((pixels > 0.65 * 255).sum())
    assert n_occupied == int((corridor_world.occupancy == OCCUPIED).sum())
    assert n_free == int((corridor_world.occupancy == FREE).sum())


def test_load_map_minimal_and_errors(tmp_path):
    from PIL import Image
    img = np.full((3, 3), 254, dtype=np.uint8)
    img[1, 1] = 0
    Image.fromarray(img).save(tmp_path / "occ.pgm")
    lib = tiny_library(3)
    from spectral_mcl.spectral import write_library
    write_library(tmp_path / "lib.spectra", lib)
    (tmp_path / "mats.csv").write_text("1,1,2\n")
    m = load_map(tmp_path / "occ.pgm", tmp_path / "mats.csv", tmp_path / "lib.spectra", 0.05)
    assert int((m.occupancy == OCCUPIED).sum()) == 1
    assert m.material_id[1, 1] == 2
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(UnknownMaterial):
        load_map(tmp_path / "occ.pgm", tmp_path / "empty.csv", tmp_path / "lib.spectra", 0.05)
    with pytest.raises(UnknownMaterial):
        (tmp_path / "dangling.csv").write_text("1,1,9\n")
        load_map(tmp_path / "occ.pgm", tmp_path / "dangling.csv", tmp_path / "lib.spectra", 0.05)
