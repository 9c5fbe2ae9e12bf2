"""Exception types shared across the package."""


class LinalignError(Exception):
    """Base class for all package errors."""


class InvalidInput(LinalignError):
    """Caller supplied data violating a documented precondition."""


class InvalidState(LinalignError):
    """Operation requires state that has not been set up (e.g. an unfitted map)."""


class NumericalFailure(LinalignError):
    """A numerical routine produced an unusable result (singular matrix, overflow...)."""


class NotConverged(NumericalFailure):
    """Iterative solver hit its iteration cap above tolerance.

    ``achieved`` carries the residual at termination.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved
