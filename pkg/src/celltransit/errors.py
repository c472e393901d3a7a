"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes: ConfigError -> 2,
NumericalError -> 3, DataError / OSError -> 4.
"""


class CellTransitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CellTransitError):
    """Invalid configuration, parameters, or shapes known before running."""


class NumericalError(CellTransitError):
    """Runtime numerical failure (divergence, NaN, stalled simulation)."""


class DataError(CellTransitError):
    """Malformed or inconsistent input data / files."""


class DegenerateEllipseError(ConfigError):
    """Ellipse axes a = b = 0; deformation index undefined."""


class InsufficientDataError(DataError):
    """Operation requires more samples than were provided."""


class UndefinedStatisticError(DataError):
    """Statistic undefined for this input (e.g. zero variance)."""


class ShapeError(ConfigError):
    """Tensor or array shape mismatch."""


class SimulationDivergedError(NumericalError):
    """Flow field failed to converge or blew up (NaN / Mach violation)."""


class TransitTimeoutError(NumericalError):
    """Cell did not clear the constriction within the step budget.

    Carries the partial trajectory recorded so far in ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SeedingError(ConfigError):
    """Cell does not fit the channel at seeding time."""


class CheckpointError(DataError):
    """Weight file incompatible with the requested model."""


class PoisonedUpdateError(NumericalError):
    """Optimizer encountered a non-finite gradient."""

    def __init__(self, param_name):
        super().__init__(f"non-finite gradient for parameter '{param_name}'")
        self.param_name = param_name
