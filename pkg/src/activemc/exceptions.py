"""Exception types raised by activemc."""

import numpy as np


class InvalidBasisError(ValueError):
    """A basis matrix does not have orthonormal columns."""


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class IndexSetError(ValueError):
    """An index list has duplicates, out-of-range entries or overlaps Omega."""


class IllConditionedError(np.linalg.LinAlgError):
    """A covariance system could not be factorized even after jitter."""

    def __init__(self, message, condition=np.inf):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class OracleError(RuntimeError):
    """The entry-value source failed; ``partial_trace`` holds what was collected."""

    def __init__(self, message, partial_trace=None, path=None):
        super().__init__(message)
        self.partial_trace = partial_trace if partial_trace is not None else []
        self.path = path
