"""Exception types shared across the package."""


class FsgdError(Exception):
    """Base class for every error raised by this package."""


class BadShapeError(FsgdError, ValueError):
    """An array argument has the wrong shape or an empty dimension."""


class RankDeficientError(FsgdError, ValueError):
    """A column collapsed during orthogonalization."""


class NoConvergenceError(FsgdError, RuntimeError):
    """An iterative routine hit its sweep/iteration cap before converging."""


class SingularMatrixError(FsgdError, ValueError):
    """A matrix required to be invertible is numerically singular."""


class NotOrthonormalError(FsgdError, ValueError):
    """An input expected to have orthonormal columns does not."""


class BadOrderError(FsgdError, ValueError):
    """An l^s norm order is not an even integer >= 2."""


class ValidationError(FsgdError, ValueError):
    """A config or spec value is out of its documented range."""


class ParseError(FsgdError, ValueError):
    """Malformed config or CSV input; message carries the offending line."""


class EmptyStreamError(FsgdError, ValueError):
    """A data source yielded no samples."""


class EmptyHistoryError(FsgdError, ValueError):
    """A predictor that needs history was given none."""


class InsufficientDataError(FsgdError, ValueError):
    """Too few samples for the requested decomposition."""


class UnknownTagError(FsgdError, ValueError):
    """A tag (component function, loading kind, method) is not recognized."""
