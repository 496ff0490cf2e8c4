"""Exception types shared across the package."""


class SpectralMclError(Exception):
    """Base class for every error raised by spectral_mcl."""


class ZeroSpectrum(SpectralMclError):
    """Spectrum is all-zero (or constant) where a nonzero range is required."""


class GridMismatch(SpectralMclError):
    """Two spectra do not share the same wavenumber grid."""


class InvalidOrder(SpectralMclError):
    """Polynomial order out of range for the spectrum length."""


class DegenerateWeight(SpectralMclError):
    """Peak-weighted distance undefined because max intensity is 0 or 1."""


class InvalidScale(SpectralMclError):
    """Non-positive likelihood scale."""


class InsufficientLibrary(SpectralMclError):
    """Spectra library too small or not distinct enough to calibrate."""


class MapMismatch(SpectralMclError):
    """Map component files disagree (dimensions, metadata, missing file)."""


class UnknownMaterial(SpectralMclError):
    """Occupied cell references a material id missing from the library."""


class EmptyMap(SpectralMclError):
    """Operation requires occupied (or free) cells the map does not have."""


class OutOfBounds(SpectralMclError):
    """Pose lies outside the map."""


class InvalidCovariance(SpectralMclError):
    """Covariance matrix is not symmetric positive semi-definite."""


class InfeasibleSpec(SpectralMclError):
    """World specification cannot be realised."""


class InvalidPose(SpectralMclError):
    """Simulated robot pose is not in free space."""


class InvalidScript(SpectralMclError):
    """Trajectory script passes through occupied space."""


class NoOverlap(SpectralMclError):
    """No timestamp pairs within the association threshold."""


class DegenerateGeometry(SpectralMclError):
    """Point sets too degenerate for rigid alignment."""


class InsufficientData(SpectralMclError):
    """Trajectory too short for the requested statistic."""
