"""Exception hierarchy shared across the package."""


class StopGoError(Exception):
    """Base class for all package errors."""


class DomainError(StopGoError, ValueError):
    """An argument lies outside the domain where a relation is defined."""


class RegimeError(StopGoError, ValueError):
    """The requested equilibrium is not in the congested regime."""


class ModelError(StopGoError, ValueError):
    """A fundamental diagram or network is ill-formed for the requested operation."""


class ConstructionError(StopGoError, ValueError):
    """An initial profile violates the traffic-state invariants."""


class BlowUpError(StopGoError, ArithmeticError):
    """Numerical blow-up during time integration.

    The simulated time at which the failure was detected is kept in ``time``.
    """

    def __init__(self, message, time):
        super().__init__(f"{message} (t = {time:.6g} s)")
        self.time = time


class GridMismatchError(StopGoError, ValueError):
    """Two results or fields live on incompatible grids."""


class ModelFileError(StopGoError, IOError):
    """A saved model file is truncated, corrupt or from an unknown version."""


class TrainingError(StopGoError, RuntimeError):
    """Training aborted (empty data, non-finite gradients, ...)."""


class InstanceMismatchError(StopGoError, ValueError):
    """A single-instance surrogate was queried at a parameter it was not trained for."""


class CalibrationError(StopGoError, ValueError):
    """Observations are too degenerate for a well-posed fit."""


class DataFileError(StopGoError, IOError):
    """An input data file is malformed (missing columns, bad rows, wrong kind)."""
