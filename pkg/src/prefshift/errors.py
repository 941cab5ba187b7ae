"""Exception hierarchy shared across the package."""


class PrefShiftError(Exception):
    """Base class for all package errors."""


class BinRangeError(PrefShiftError, IndexError):
    """A bin or item index falls outside ``[0, n_bins)``."""


class ParameterError(PrefShiftError, ValueError):
    """An argument violates its documented precondition."""


class ShapeError(PrefShiftError, ValueError):
    """Inputs have inconsistent or malformed shapes."""


class DegenerateEvidenceError(PrefShiftError, ArithmeticError):
    """An observation has zero likelihood under every hidden preference."""


class TrainingError(PrefShiftError, RuntimeError):
    """Optimisation failed (empty data, non-finite loss, ...)."""


class ConfigurationError(PrefShiftError, ValueError):
    """A component was used without the pieces it depends on."""
