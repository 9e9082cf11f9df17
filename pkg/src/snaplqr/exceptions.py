"""Exception types raised by snaplqr."""


class SnapLqrError(Exception):
    """Base class for all snaplqr-specific errors."""


class StabilityError(SnapLqrError, ValueError):
    """A matrix that must be Hurwitz (or semi-stable) is not."""


class SimulationError(SnapLqrError, RuntimeError):
    """Numerical integration produced non-finite values."""


class RankDeficientDataError(SnapLqrError, RuntimeError):
    """Collected data does not satisfy the excitation rank condition.

    Attributes
    ----------
    rank : int
        Numerical rank of the stacked regressor matrix.
    required : int
        Rank needed for a unique policy-improvement solution.
    """

    def __init__(self, rank: int, required: int):
        self.rank = rank
        self.required = required
        super().__init__(
            f"regressor rank {rank} below the required {required}; "
            "collect more samples or enrich the exploration signal "
            "(pass rank_policy='warn' to proceed with the minimum-norm solution)"
        )


class ConvergenceError(SnapLqrError, RuntimeError):
    """An iterative solver failed to converge."""
