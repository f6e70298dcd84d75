class ElmaxError(Exception):
    """Base class for errors raised by elmax."""


class DegenerateCovarianceError(ElmaxError, ValueError):
    """The score covariance is singular or indefinite.

    Usually a sign of a constant column or of collinear policies.
    """


class GenerationError(ElmaxError, RuntimeError):
    """A randomized construction could not be completed within its budget."""


class FitError(ElmaxError, ValueError):
    """A nuisance model could not be fit on the supplied training data."""
