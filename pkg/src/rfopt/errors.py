"""Exception types shared across the library.

The CLI maps these onto exit codes: input/parameter/domain problems exit
with 1, numerical failures (factorization, solver, simulation) with 2.
"""


class RfoptError(Exception):
    """Base class for all library errors."""


class InputError(RfoptError, ValueError):
    """Malformed or inconsistent caller input (shapes, lengths, mismatched grids)."""


class ParameterError(RfoptError, ValueError):
    """A numeric parameter is outside its admissible range."""


class DomainError(RfoptError, ValueError):
    """Argument outside the mathematical domain of a function (e.g. x <= 0)."""


class UnsupportedDimensionError(RfoptError):
    """Operation not defined for the dimensionality of the given grid."""


class SizeError(RfoptError):
    """Problem size exceeds the limits this implementation is willing to attempt."""


class NotPositiveDefiniteError(RfoptError):
    """Cholesky factorization failed even at the largest allowed jitter.

    ``pivot`` is the zero-based index of the first leading minor that failed.
    """

    def __init__(self, pivot: int, jitter: float):
        self.pivot = pivot
        self.jitter = jitter
        super().__init__(
            f"matrix is not positive definite: factorization failed at pivot "
            f"{pivot} with jitter {jitter:g}"
        )


class SolverError(RfoptError):
    """The optimizer failed to produce a usable solution."""


class InfeasibleError(SolverError):
    """The optimizer detected that no feasible point exists."""


class SimulationError(RfoptError):
    """A time-stepping simulation failed to converge."""


class InvariantViolationError(RfoptError):
    """A value violates an invariant the caller promised to maintain."""
