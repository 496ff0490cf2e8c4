"""Spectrum container, preprocessing, sensor-noise synthesis and similarity metrics.

All spectra live on a fixed wavenumber grid (start, step, n bins) and are
immutable after construction, so every function here is a pure function that
is safe to call from any number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateWeight,
    GridMismatch,
    InsufficientLibrary,
    InvalidOrder,
    InvalidScale,
    ZeroSpectrum,
)

DEFAULT_GRID_START = 200.0
DEFAULT_GRID_STEP = 2800.0 / 511.0  # 200..3000 cm^-1 over 512 bins
DEFAULT_N_BINS = 512
DEFAULT_BASELINE_ORDER = 3
KL_FLOOR = 1e-9
_BASELINE_NOISE_TERMS = 3  # random drift polynomial: c0 + c1*u + c2*u^2


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Non-negative intensities over an evenly spaced wavenumber grid (cm^-1)."""

    grid_start: float
    grid_step: float
    intensities: np.ndarray

    def __post_init__(self):
        arr = np.array(self.intensities, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("spectrum needs a 1-D intensity array of length >= 2")
        if not np.all(np.isfinite(arr)):
            raise ValueError("intensities must be finite")
        if arr.min() < 0.0:
            raise ValueError("intensities must be non-negative")
        if not (self.grid_step > 0.0):
            raise ValueError("grid_step must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "grid_start", float(self.grid_start))
        object.__setattr__(self, "grid_step", float(self.grid_step))
        object.__setattr__(self, "intensities", arr)

    def __len__(self) -> int:
        return int(self.intensities.size)

    def same_grid(self, other: "Spectrum") -> bool:
        return (
            self.grid_start == other.grid_start
            and self.grid_step == other.grid_step
            and len(self) == len(other)
        )

    def with_intensities(self, arr: np.ndarray) -> "Spectrum":
        return replace(self, intensities=arr)

    def wavenumbers(self) -> np.ndarray:
        return self.grid_start + self.grid_step * np.arange(len(self))


class MetricKind(str, Enum):
    SLK = "slk"
    MOD_L2 = "mod-l2"
    WASSERSTEIN = "wasserstein"
    KL = "kl"
    SAM = "sam"


@dataclass(frozen=True)
class SimilarityMetric:
    """A spectral distance plus the scale that maps it to a likelihood.

    window applies to the windowed-kernel distance only; scale is the
    squared-exponential divisor (see distance_to_likelihood).
    """

    kind: MetricKind
    window: int = 5
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if int(self.window) < 1:
            raise ValueError("window must be >= 1")
        object.__setattr__(self, "window", int(self.window))
        if not (self.scale > 0.0):
            raise InvalidScale(f"scale must be > 0, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor noise model: photon shot noise, additive read noise, baseline drift.

    shot_scale converts normalised intensity into an expected photon count;
    per-bin counts are Poisson draws scaled back down. read_sigma is the std
    of additive Gaussian noise, baseline_coeffs_sigma the std of the random
    low-order polynomial drift coefficients. Every sigma may be zero.
    """

    shot_scale: float = 5e3
    read_sigma: float = 0.01
    baseline_coeffs_sigma: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("shot_scale", "read_sigma", "baseline_coeffs_sigma"):
            v = float(getattr(self, name))
            if v < 0.0 or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite value >= 0")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "rng_seed", int(self.rng_seed))


DEFAULT_NOISE = NoiseConfig()


def _check_comparable(a: Spectrum, b: Spectrum) -> None:
    if not a.same_grid(b):
        raise GridMismatch(
            f"grids differ: ({a.grid_start}, {a.grid_step}, {len(a)}) vs "
            f"({b.grid_start}, {b.grid_step}, {len(b)})"
        )


def normalize_unit_sum(s: Spectrum) -> Spectrum:
    """Scale intensities to sum to one."""
    total = float(s.intensities.sum())
    if total <= 0.0:
        raise ZeroSpectrum("cannot unit-sum normalize an all-zero spectrum")
    return s.with_intensities(s.intensities / total)


def normalize_minmax(s: Spectrum) -> Spectrum:
    """Affinely map intensities onto [0, 1]."""
    lo = float(s.intensities.min())
    hi = float(s.intensities.max())
    if hi - lo <= 0.0:
        raise ZeroSpectrum("cannot min-max normalize a constant spectrum")
    return s.with_intensities((s.intensities - lo) / (hi - lo))


def baseline_correct(s: Spectrum, poly_order: int = DEFAULT_BASELINE_ORDER) -> Spectrum:
    """Subtract a least-squares polynomial baseline, clipping residuals at zero."""
    n = len(s)
    if poly_order < 0 or poly_order >= n - 1:
        raise InvalidOrder(f"poly_order must be in [0, {n - 2}], got {poly_order}")
    x = np.arange(n, dtype=float)
    fit = np.polynomial.Polynomial.fit(x, s.intensities, poly_order)
    residual = s.intensities - fit(x)
    return s.with_intensities(np.clip(residual, 0.0, None))


def apply_sensor_noise(s: Spectrum, cfg: NoiseConfig) -> Spectrum:
    """Corrupt a spectrum with shot noise, read noise and baseline drift.

    Deterministic for a fixed cfg.rng_seed. A config with all sigmas zero
    returns the input intensities unchanged.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    y = np.array(s.intensities, dtype=float)
    if cfg.shot_scale > 0.0:
        y = rng.poisson(cfg.shot_scale * y).astype(float) / cfg.shot_scale
    if cfg.read_sigma > 0.0:
        y = y + rng.normal(0.0, cfg.read_sigma, y.size)
    if cfg.baseline_coeffs_sigma > 0.0:
        coeffs = rng.normal(0.0, cfg.baseline_coeffs_sigma, _BASELINE_NOISE_TERMS)
        u = np.linspace(0.0, 1.0, y.size)
        y = y + coeffs[0] + coeffs[1] * u + coeffs[2] * u * u
    return s.with_intensities(np.clip(y, 0.0, None))


def _slk_kernel(x: np.ndarray, y: np.ndarray, window: int) -> float:
    n = x.size
    idx = np.arange(n)
    total = float(x @ y)
    for off in range(-window, window + 1):
        j = np.clip(idx + off, 0, n - 1)
        total += float(np.sum((x - x[j]) * (y - y[j])))
    return total


def dist_slk(a: Spectrum, b: Spectrum, window: int = 5) -> float:
    """Distance induced by the windowed linear kernel.

    The kernel pairs raw intensity products with windowed shape-difference
    products (window indices clamped at the spectrum edges); the returned
    value is the kernel-induced squared distance k(a,a) + k(b,b) - 2 k(a,b).
    """
    _check_comparable(a, b)
    if window < 1:
        raise ValueError("window must be >= 1")
    xa, xb = a.intensities, b.intensities
    d = _slk_kernel(xa, xa, window) + _slk_kernel(xb, xb, window) - 2.0 * _slk_kernel(xa, xb, window)
    return max(d, 0.0)


def dist_mod_l2(a: Spectrum, b: Spectrum) -> float:
    """Peak-weighted Euclidean distance between unit-sum spectra.

    a is the observed spectrum, b the map spectrum. Squared bin differences
    are divided by the peak weight w where the observation overshoots a
    nonzero map bin, multiplied by w where it overshoots an empty map bin,
    and kept plain otherwise. w = max(a)/(1-max(a)), inverted when
    max(a) <= 0.5 so that it always acts as a penalty factor >= 1.
    """
    _check_comparable(a, b)
    z = a.intensities  # observed
    x = b.intensities  # map
    amax = float(z.max())
    if amax <= 0.0 or amax >= 1.0:
        raise DegenerateWeight(f"max intensity {amax} leaves the peak weight undefined")
    w = amax / (1.0 - amax) if amax > 0.5 else (1.0 - amax) / amax
    d2 = (z - x) ** 2
    over = z > x
    case_reward = (x != 0.0) & over
    case_penalty = (x == 0.0) & over
    total = float(np.sum(np.where(case_reward, d2 / w, np.where(case_penalty, d2 * w, d2))))
    return math.sqrt(total)


def dist_wasserstein(a: Spectrum, b: Spectrum) -> float:
    """First Wasserstein distance between unit-sum spectra, in bin units.

    Evaluated as the cost of the optimal transport plan, built by sweeping
    both spectra left to right and moving the smaller of the pending supply
    and demand at each step (optimal on the line).
    """
    _check_comparable(a, b)
    supply = list(a.intensities)
    demand = list(b.intensities)
    n = len(supply)
    cost = 0.0
    i = 0
    j = 0
    while i < n and j < n:
        moved = min(supply[i], demand[j])
        if moved > 0.0:
            cost += moved * abs(i - j)
        supply[i] -= moved
        demand[j] -= moved
        if supply[i] <= 0.0:
            i += 1
        if demand[j] <= 0.0:
            j += 1
    return cost


def dist_kl(a: Spectrum, b: Spectrum) -> float:
    """Directional Kullback-Leibler divergence KL(a || b) in nats.

    Both operands get an epsilon floor added to every bin and are
    re-normalised before the sum, so sparse spectra stay finite.
    """
    _check_comparable(a, b)
    p = a.intensities + KL_FLOOR
    q = b.intensities + KL_FLOOR
    p = p / p.sum()
    q = q / q.sum()
    return max(float(np.sum(p * np.log(p / q))), 0.0)


def dist_sam(a: Spectrum, b: Spectrum) -> float:
    """Angle between two spectra seen as vectors, in radians.

    Scale-invariant; range [0, pi/2] for non-negative spectra.
    """
    _check_comparable(a, b)
    na = float(np.linalg.norm(a.intensities))
    nb = float(np.linalg.norm(b.intensities))
    if na == 0.0 or nb == 0.0:
        raise ZeroSpectrum("cannot take the angle of a zero spectrum")
    if np.array_equal(a.intensities, b.intensities):
        return 0.0
    c = float(a.intensities @ b.intensities) / (na * nb)
    return math.acos(min(1.0, max(-1.0, c)))


def spectrum_distance(a: Spectrum, b: Spectrum, metric: SimilarityMetric) -> float:
    """Dispatch to the configured distance. a is the observed operand."""
    if metric.kind is MetricKind.SLK:
        return dist_slk(a, b, metric.window)
    if metric.kind is MetricKind.MOD_L2:
        return dist_mod_l2(a, b)
    if metric.kind is MetricKind.WASSERSTEIN:
        return dist_wasserstein(a, b)
    if metric.kind is MetricKind.KL:
        return dist_kl(a, b)
    return dist_sam(a, b)


def prepare_for_metric(s: Spectrum, kind: MetricKind) -> Spectrum:
    """Bring a spectrum into the normalisation the given metric expects."""
    kind = MetricKind(kind)
    if kind is MetricKind.SLK:
        return normalize_minmax(s)
    if kind in (MetricKind.MOD_L2, MetricKind.WASSERSTEIN, MetricKind.KL):
        return normalize_unit_sum(s)
    return s


def distance_to_likelihood(d: float, scale: float) -> float:
    """Squared-exponential map from a distance to a likelihood in (0, 1]."""
    if not (scale > 0.0):
        raise InvalidScale(f"scale must be > 0, got {scale}")
    if d < 0.0:
        raise ValueError(f"distance must be >= 0, got {d}")
    return math.exp(-(d * d) / scale)


def calibrate_scale(library: list[Spectrum], kind: MetricKind, window: int = 5) -> float:
    """Pick the likelihood scale from the library's own spread.

    Returns K = median(pairwise distance)^2 / ln 2 so the median distance
    between distinct library spectra maps to a likelihood of one half.
    """
    kind = MetricKind(kind)
    if len(library) < 2:
        raise InsufficientLibrary("need at least 2 library spectra")
    metric = SimilarityMetric(kind=kind, window=window)
    prepared = [prepare_for_metric(s, kind) for s in library]
    dists = []
    for i, si in enumerate(prepared):
        for j, sj in enumerate(prepared):
            if i != j:
                dists.append(spectrum_distance(si, sj, metric))
    median = float(np.median(dists))
    if median <= 0.0:
        raise InsufficientLibrary("library spectra are not distinct under this metric")
    return median * median / math.log(2.0)


def calibrated_metric(library: list[Spectrum], kind: MetricKind, window: int = 5) -> SimilarityMetric:
    """SimilarityMetric with its scale calibrated against the library."""
    return SimilarityMetric(kind=MetricKind(kind), window=window,
                            scale=calibrate_scale(library, kind, window))


def write_library(path: str | Path, library: list[Spectrum],
                  names: list[str] | None = None) -> None:
    """Write a spectra library file.

    Header line: `grid_start grid_step n_bins`; one line per spectrum:
    `id,name,i_0,...,i_{n-1}` with dense integer ids from 0.
    """
    if not library:
        raise InsufficientLibrary("refusing to write an empty library")
    if names is None:
        names = [f"material_{i}" for i in range(len(library))]
    if len(names) != len(library):
        raise ValueError("names must match the library length")
    ref = library[0]
    lines = [f"{ref.grid_start!r} {ref.grid_step!r} {len(ref)}"]
    for i, (s, name) in enumerate(zip(library, names)):
        if not s.same_grid(ref):
            raise GridMismatch("all library spectra must share one grid")
        if "," in name or "\n" in name:
            raise ValueError(f"invalid material name {name!r}")
        values = ",".join(repr(float(v)) for v in s.intensities)
        lines.append(f"{i},{name},{values}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_library(path: str | Path) -> tuple[list[Spectrum], list[str]]:
    """Parse a spectra library file written by write_library."""
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValueError(f"empty library file: {path}")
    header = text[0].split()
    if len(header) != 3:
        raise ValueError(f"bad library header: {text[0]!r}")
    grid_start, grid_step, n_bins = float(header[0]), float(header[1]), int(header[2])
    spectra: list[Spectrum] = []
    names: list[str] = []
    for lineno, line in enumerate(text[1:]):
        parts = line.split(",")
        if len(parts) != 2 + n_bins:
            raise ValueError(f"library row {lineno} has {len(parts) - 2} bins, expected {n_bins}")
        if int(parts[0]) != lineno:
            raise ValueError(f"library ids must be dense from 0, got {parts[0]} at row {lineno}")
        names.append(parts[1])
        spectra.append(Spectrum(grid_start, grid_step,
                                np.array([float(v) for v in parts[2:]])))
    if not spectra:
        raise ValueError(f"library file has no spectra: {path}")
    return spectra, names
