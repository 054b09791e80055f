"""Exception types shared across the package.

Each error class maps to a CLI exit code so that scripted runs can
distinguish bad input from solver trouble.
"""


class ConelabError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(ConelabError):
    """A precondition on user-supplied parameters was violated."""

    exit_code = 2


class MismatchError(ParameterError):
    """Two objects that must share parameters (e.g. an aperture) do not."""

    exit_code = 2


class FactorizationError(ConelabError):
    """Sparse factorization of a shifted pencil failed (singular shift)."""

    exit_code = 3


class NoConvergenceError(ConelabError):
    """Eigensolver hit its iteration cap; partial results may be attached."""

    exit_code = 3

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InsufficientPointsError(ConelabError):
    """Too few resolved eigenvalues to fit a counting curve."""

    exit_code = 4


class NonPositiveEstimateError(ConelabError):
    """Hardy-constant estimate came out non-positive (discretization failure)."""

    exit_code = 5
