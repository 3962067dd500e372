"""Shared exception types."""


class ConfigurationError(ValueError):
    """Construction arguments or a run configuration are invalid."""


class ParameterError(ValueError):
    """A schedule formula degenerates for the supplied constants."""


class UnsupportedProblemError(ValueError):
    """The problem lacks metadata needed by the requested operation."""


class DivergenceError(RuntimeError):
    """A non-finite value appeared while optimizing.

    Carries the epoch index and the 1-based inner-step index at which the
    first non-finite gradient or iterate was produced.
    """

    def __init__(self, message, epoch=None, step_index=None):
        super().__init__(message)
        self.epoch = epoch
        self.step_index = step_index


class NumericError(RuntimeError):
    """An iterative solve failed to converge; carries the iterate history."""

    def __init__(self, message, iterates=None):
        super().__init__(message)
        self.iterates = list(iterates) if iterates is not None else []
