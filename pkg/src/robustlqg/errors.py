"""Exception hierarchy for robustlqg."""


class RobustLqgError(Exception):
    """Base class for all library errors."""


class InvalidInputError(RobustLqgError, ValueError):
    """Malformed input: wrong shape, non-finite entries, broken invariants."""


class InstabilityError(RobustLqgError):
    """A matrix required to be Schur stable has spectral radius >= 1."""


class ConditioningError(RobustLqgError):
    """A matrix required to be positive definite is numerically singular."""


class NumericError(RobustLqgError):
    """A numerical operation left its domain of validity."""


class UnsupportedDivergenceError(RobustLqgError):
    """Requested operation is not available for this divergence kind."""


class OracleError(RobustLqgError):
    """A linearization oracle failed to produce a certified solution."""


class StabilizabilityError(RobustLqgError):
    """Numerical stabilizability/detectability certificate failed."""
