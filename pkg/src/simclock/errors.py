"""Exception hierarchy shared by every simclock module."""


class SimclockError(Exception):
    """Base class for all errors raised by simclock."""


class DomainError(SimclockError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateStateError(SimclockError, ValueError):
    """The spin state has no usable mean direction."""


class StructuralError(SimclockError, ValueError):
    """A pulse sequence is malformed."""


class ExtrapolationError(SimclockError, ValueError):
    """A tabulated model was queried outside its range."""


class PairingError(SimclockError, ValueError):
    """Records cannot be paired for differential subtraction."""


class FitError(SimclockError, RuntimeError):
    """A fit could not produce a meaningful result."""


class NotConvergedError(FitError):
    """An iterative fit hit its iteration limit.

    The best iterate found so far is available as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(SimclockError, ValueError):
    """A configuration file or override could not be resolved."""
