"""Exception hierarchy shared across the library.

Every operational failure raises a subclass of :class:`WireReconError`
so callers (notably the CLI) can map failures to exit codes without
string matching.
"""


class WireReconError(Exception):
    """Base class for all library errors."""


# --- Lie geometry -----------------------------------------------------------

class AngleNearPi(WireReconError):
    """Rotation too close to the pi-angle cut of the log map."""


class BehindCamera(WireReconError):
    """Point has non-positive depth after the rigid transform."""


# --- Morphology -------------------------------------------------------------

class EmptyMask(WireReconError):
    """Binary mask or volume has no foreground."""


class NoBoundary(WireReconError):
    """Mask has no boundary element to measure distances against."""


class GridTooSmall(WireReconError):
    """Scalar field grid is too small for finite differences."""


# --- Centerlines ------------------------------------------------------------

class NoCenterline(WireReconError):
    """No usable centerline chain could be extracted."""


class DegenerateCurve(WireReconError):
    """Curve too short or collapsed for the requested operation."""


# --- Wire graph -------------------------------------------------------------

class TooFewNodes(WireReconError):
    """Graph construction requires at least two nodes."""


class NoConvergence(WireReconError):
    """Iterative eigensolver failed to converge."""


# --- Registration -----------------------------------------------------------

class EmptyCenterline(WireReconError):
    """Registration requires non-empty 2D and 3D centerlines."""


class SingularNormalEquations(WireReconError):
    """Damped normal equations stayed singular after repeated re-damping."""


class DivergedBehindCamera(WireReconError):
    """Too many points fell behind the camera at an accepted iterate."""


# --- Reconstruction ---------------------------------------------------------

class NoIntersection(WireReconError):
    """Back-projected ray passes too far from the vessel centerline."""


class DegenerateGeometry(WireReconError):
    """Closed-form depth denominator vanishes (e.g. identity rotation)."""


class NotConverged(WireReconError):
    """Operation requires a converged registration result."""


class ReconstructionFailed(WireReconError):
    """Too many wire points had no recoverable depth."""


# --- Phantom ----------------------------------------------------------------

class CurveOutOfBounds(WireReconError):
    """Swept tube exits the voxel volume."""


class SceneBehindCamera(WireReconError):
    """Phantom scene lies behind the virtual camera."""


# --- Metrics / pipeline -----------------------------------------------------

class EmptyInput(WireReconError):
    """Metric evaluated on an empty input."""


class DataError(WireReconError):
    """Missing or unreadable input file / malformed data."""
