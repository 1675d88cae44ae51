"""Exception types raised by the package."""


class ContractError(ValueError):
    """Input violates a documented precondition (ordering, shapes, ranges)."""


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class SolverError(RuntimeError):
    """A least-squares solve failed (singular system or no convergence)."""


class BoundaryNotFoundError(RuntimeError):
    """No feasible boundary point exists on the searched interval."""


class EstimationError(RuntimeError):
    """The estimator could not produce a result for the given data/grid."""
