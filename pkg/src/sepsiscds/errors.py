"""Exception types shared across the package."""


class SepsisCdsError(Exception):
    """Base class for all package errors."""


class ValidationError(SepsisCdsError):
    """Input violates a documented contract (bad row, bad range, bad schema)."""


class EmptyCohortError(SepsisCdsError):
    """No trajectories to work with."""


class InsufficientDataError(SepsisCdsError):
    """Fewer distinct points than requested clusters."""


class DegenerateQuantilesError(SepsisCdsError):
    """Dose quantile edges are not strictly ascending."""


class NonContractiveError(SepsisCdsError):
    """gamma = 1 with states that cannot reach a terminal; Bellman solve singular."""


class NoOverlapError(SepsisCdsError):
    """All importance weights are zero; evaluation policy unsupported by data."""


class ConvergenceError(SepsisCdsError):
    """Iterative fit failed to converge within its iteration budget."""


class SeparationError(SepsisCdsError):
    """Perfect separation detected in a logistic fit."""
