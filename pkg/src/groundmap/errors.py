"""Exception types shared across the pipeline.

The CLI prints the class name of the failing error as a single
machine-parseable line, so every failure mode gets its own class.
"""


class PipelineError(Exception):
    """Base class for all groundmap errors."""


# geometry
class BehindCamera(PipelineError):
    """Point maps to camera-frame depth <= 0."""


class NonPositiveDepth(PipelineError):
    """Backprojection requested with depth <= 0."""


class EmptyDepthImage(PipelineError):
    """Depth image holds no valid sample."""


class DegenerateCloud(PipelineError):
    """Point cloud cannot support a plane fit."""


# annotate
class NoValidDepth(PipelineError):
    """No usable depth at a detection center (frame skipped)."""


class TooFewPoints(PipelineError):
    """Fewer than two usable samples for a trajectory."""


class DimensionMismatch(PipelineError):
    """Rasters or vectors of incompatible sizes."""


# fuse
class FrameOutsideMap(PipelineError):
    """Every pixel of a frame fell outside the map bounds."""


# mesh
class TooFewPatches(PipelineError):
    """Not enough observed cells to triangulate."""


# evaluate
class GridMismatch(PipelineError):
    """Map extents are disjoint; nothing to compare."""


# plan
class MissingClassCost(PipelineError):
    """Cost table does not cover every surface class."""


class NoPath(PipelineError):
    """Search exhausted without reaching the goal."""


class InvalidEndpoint(PipelineError):
    """Start or goal is out of bounds or impassable."""


# sim
class InfeasibleLayout(PipelineError):
    """World widths exceed the requested extent."""


class RouteOffSurface(PipelineError):
    """An ego route waypoint is not on a legal surface."""


# cli / config
class MissingInput(PipelineError):
    """A required input file or directory is absent."""


class ConfigError(PipelineError):
    """Bad configuration file or unknown key."""
