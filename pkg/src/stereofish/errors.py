"""Exception hierarchy and process exit codes shared across the package."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class StereoFishError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(StereoFishError):
    """Invalid or missing configuration (bad paths, bad parameters)."""

    exit_code = EXIT_CONFIG


class DataError(StereoFishError):
    """Malformed or inconsistent input data."""

    exit_code = EXIT_DATA


class NumericError(StereoFishError):
    """A numeric procedure hit a degenerate or non-convergent case."""

    exit_code = EXIT_NUMERIC


# geometry
class DegenerateDepth(NumericError):
    """Projective depth vanished: the point lies on the principal plane."""


class NonConvergence(NumericError):
    """An iterative routine did not reach its tolerance."""


class ParallelRays(NumericError):
    """Triangulation rays are (numerically) parallel or coincident."""


# calibration
class DegenerateConfiguration(NumericError):
    """Correspondences do not determine a homography (e.g. collinear)."""


class InsufficientViews(DataError):
    """Too few views for the closed-form intrinsics solution."""


class IllConditioned(NumericError):
    """The absolute-conic system has no valid (positive-definite) solution."""


class ZeroBaseline(DataError):
    """Stereo rig with coincident camera centres cannot be rectified."""


# pairing
class ZeroVector(DataError):
    """A feature vector has zero norm."""


class DimensionMismatch(DataError):
    """Feature vectors of different lengths were compared."""


# measurement
class DegenerateMask(DataError):
    """Mask has too few foreground pixels to measure."""


class EmptyBand(DataError):
    """No target-mask pixels fall inside the epipolar band of a point."""


class UnmeasurableFish(DataError):
    """Neither matching direction produced a usable length or height."""


# tracking
class SingularInnovation(NumericError):
    """Kalman innovation covariance is not invertible."""


class OutOfOrderFrame(DataError):
    """Tracker stepped with a frame index that does not increase."""


# synthetic harness
class TooLarge(DataError):
    """Instance exceeds the brute-force enumeration limit."""
