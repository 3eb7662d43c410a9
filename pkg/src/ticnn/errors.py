"""Exception types shared across the package."""


class TicnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(TicnnError, ValueError):
    """Operands have incompatible or unsupported shapes."""


class DivisibilityError(TicnnError, ValueError):
    """A stride, pool size, or shift does not evenly divide the space it scans."""


class ConfigurationError(TicnnError, ValueError):
    """A config file or network description is structurally invalid."""


class ClassificationError(TicnnError, ValueError):
    """Wavelet filters cannot be classified (untagged or irregular coefficients)."""


class TrainingDivergedError(TicnnError, RuntimeError):
    """Training produced a non-finite loss."""
