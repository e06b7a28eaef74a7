"""Exception hierarchy shared by all cbmm modules."""


class CbmmError(Exception):
    """Base class for errors raised by cbmm."""


class ParameterDomainError(CbmmError, ValueError):
    """A distribution parameter lies outside its admissible domain."""


class DomainError(CbmmError, ValueError):
    """An evaluation point lies outside the domain of the operation."""


class InsufficientDataError(CbmmError, ValueError):
    """Too few observations for the requested operation."""


class DegenerateDataError(CbmmError, ValueError):
    """The observations carry no spread (e.g. all values identical)."""


class FitError(CbmmError, RuntimeError):
    """An optimizer did not converge.

    The best parameters found so far are kept on ``best`` so callers may
    decide to use them anyway.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SelectionError(CbmmError, RuntimeError):
    """Every candidate form failed to fit.

    ``causes`` maps each candidate family to the exception it raised.
    """

    def __init__(self, message, causes=None):
        super().__init__(message)
        self.causes = dict(causes or {})


class UndefinedPosteriorError(CbmmError, ValueError):
    """The mixture density is zero at a point, so its posterior is undefined."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CollapseError(CbmmError, RuntimeError):
    """A GICE component stayed below the subgroup floor too long.

    ``trace`` holds the iterations completed before the collapse.
    """

    def __init__(self, message, trace=None, component=None):
        super().__init__(message)
        self.trace = trace
        self.component = component
