"""Exception hierarchy shared by all rsadp modules."""


class RsadpError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(RsadpError):
    """An argument violates a documented precondition (shape, symmetry, ...)."""


class SingularInputError(RsadpError):
    """A matrix expected to have full column rank is (numerically) rank deficient."""


class ConstraintViolationError(RsadpError):
    """A state or input left its admissible set.

    Attributes
    ----------
    index : int or None
        Offending barrier index (state constraints) or input channel.
    step : int or None
        Simulation step at which the violation occurred, when known.
    """

    def __init__(self, message: str, index: int | None = None, step: int | None = None):
        super().__init__(message)
        self.index = index
        self.step = step


class IntegrationDivergedError(RsadpError):
    """A Runge-Kutta stage produced a non-finite value.

    Attributes
    ----------
    t : float
        Time at the start of the failing step.
    stage : int
        Stage index (1..4) that went non-finite.
    """

    def __init__(self, message: str, t: float, stage: int):
        super().__init__(message)
        self.t = t
        self.stage = stage


class LearningDivergedError(RsadpError):
    """The estimated weight vector became non-finite or exceeded the guard norm."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UnknownNameError(RsadpError, KeyError):
    """Lookup of a built-in model or preset by an unknown name."""


class ConfigError(RsadpError):
    """Invalid run configuration (bad JSON, unknown keys, empty grids, ...)."""
