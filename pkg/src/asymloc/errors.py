"""Exception classes shared across the toolkit."""


class AsymlocError(Exception):
    """Base class for all toolkit-specific failures."""


class ShapeError(AsymlocError, ValueError):
    """Tensor or matrix dimensions do not satisfy an operation's contract."""


class ConfigError(AsymlocError, ValueError):
    """Invalid or inconsistent configuration value."""


class ArityError(AsymlocError, ValueError):
    """Too few inputs for an operation (e.g. < 4 correspondences for DLT)."""


class DegeneracyError(AsymlocError, RuntimeError):
    """Numerically degenerate problem instance (collinear points, singular system)."""


class GraphError(AsymlocError, RuntimeError):
    """Misuse of the differentiation graph (non-scalar loss, double backward)."""


class FormatError(AsymlocError, ValueError):
    """Unrecognized magic/version in a binary file."""


class CorruptionError(AsymlocError, ValueError):
    """Structurally valid header but inconsistent or truncated payload."""


class CorpusError(AsymlocError, RuntimeError):
    """An image corpus directory yielded no usable images."""


class TrainingFault(AsymlocError, RuntimeError):
    """Non-finite loss or gradient encountered during optimization."""
