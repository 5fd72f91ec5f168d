"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes (config -> 1, data -> 2,
numerical -> 3), so anything raised on a user-facing path should
subclass one of the three roots below.  Shape and index problems
inside the autodiff core raise ShapeError / IndexError directly.
"""


class MissError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MissError):
    """Invalid configuration key, value, or file."""


class DataError(MissError):
    """Input data unusable: unreadable, malformed, or degenerate."""


class FormatError(DataError):
    """Malformed record or file body."""


class DegenerateDatasetError(DataError):
    """Filtering or splitting left nothing to train on."""


class ShapeError(MissError, ValueError):
    """Operand shapes incompatible with the requested operation."""


class MetricError(MissError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class NumericalError(MissError):
    """Non-finite value appeared where a finite one is required."""
