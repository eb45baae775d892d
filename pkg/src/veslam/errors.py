"""Exception types shared across the package."""


class VeslamError(RuntimeError):
    """Base class for all package errors."""


class NonPositiveDepth(VeslamError):
    """Point projects with depth at or below the numeric floor."""


class DegenerateConfiguration(VeslamError):
    """Two-view geometry cannot be recovered from the given correspondences."""


class ParallelRays(VeslamError):
    """Rays are too close to parallel to triangulate."""


class BehindCamera(VeslamError):
    """Triangulated depth is non-positive for at least one ray."""


class InvalidRestDistance(VeslamError):
    """Elastic rest distance must be strictly positive."""


class InvalidWeight(VeslamError):
    """Viscous pairwise weight must lie in (0, 1]."""


class TooFewPoints(VeslamError):
    """Graph construction needs at least two points."""


class DuplicatePoint(VeslamError):
    """Point id already present in the deformation graph."""


class UnknownPoint(VeslamError):
    """Point id not present in the deformation graph."""


class NumericalFailure(VeslamError):
    """Normal equations remained singular beyond damping recovery."""


class OutOfBounds(VeslamError):
    """Patch window leaves the image domain."""


class Diverged(VeslamError):
    """Tracker update exceeded the per-level step cap."""


class TrackingLost(VeslamError):
    """Too few tracked points to estimate the current frame."""


class InsufficientParallax(VeslamError):
    """Median ray parallax below the initialization floor."""


class InitializationRejected(VeslamError):
    """Initial map failed the post-refinement reprojection check."""


class MissingGroundTruth(VeslamError):
    """Evaluation inputs lack matching ground-truth data."""


class ConfigError(VeslamError):
    """Malformed or unknown configuration input."""
