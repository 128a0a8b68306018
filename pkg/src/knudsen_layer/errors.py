"""Exception types shared across the toolkit."""


class KnudsenError(Exception):
    """Base class for all errors raised by this package."""


class InvariantError(KnudsenError, ValueError):
    """A parameter set violates a structural invariant."""


class GridError(KnudsenError):
    """A velocity or spatial grid is too coarse or too narrow."""


class DomainError(KnudsenError, ValueError):
    """An input lies outside the domain where an operation is defined."""


class NotSolvableError(KnudsenError):
    """Input has a component in the null space where none is allowed.

    ``moments`` carries the offending coefficients.
    """

    def __init__(self, message, moments=None):
        super().__init__(message)
        self.moments = moments


class ConvergenceError(KnudsenError):
    """An iteration failed to reach its tolerance.

    ``history`` holds whatever convergence record was gathered.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class SegmentError(DomainError):
    """A requested time lies outside the valid segment of a trajectory."""

    def __init__(self, message, bounds=None):
        super().__init__(message)
        self.bounds = bounds
