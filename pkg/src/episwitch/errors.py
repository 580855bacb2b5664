"""Exception hierarchy shared by every module."""


class EpiswitchError(Exception):
    """Base class for all package errors."""


class ModelError(EpiswitchError, ValueError):
    """Malformed model definition or configuration file."""


class DomainError(EpiswitchError, ValueError):
    """Argument outside the domain of an operation."""


class InconsistencyError(ModelError):
    """Numerically derived quantity contradicts a structural assumption."""


class UnsupportedModelError(ModelError):
    """Operation requires a model family this model does not belong to."""


class NumericalError(EpiswitchError, RuntimeError):
    """An iterative method failed to converge."""


class IntegrationError(NumericalError):
    """ODE integration left the unit cube or produced NaN."""


class SizeError(EpiswitchError, ValueError):
    """Enumerated state space exceeds the configured cap."""

    def __init__(self, message, size):
        super().__init__(message)
        self.size = size
