"""Exception types shared across the solver modules."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """Array shapes or sizes do not match the operation's contract."""


class SetupError(RuntimeError):
    """Problem data (dynamics, grids) produced invalid values at setup time."""


class NumericError(RuntimeError):
    """A non-finite value appeared during a numerical sweep."""


class EvaluationError(RuntimeError):
    """A cost functional or its derivative is not finite at the requested point.

    Carries the offending moment vector (if any) in ``args`` for diagnosis.
    """


class ConfigError(ValueError):
    """A run configuration failed validation."""
