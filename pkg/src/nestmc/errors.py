"""Typed errors shared across the toolkit."""


class NestmcError(Exception):
    """Base class for all toolkit errors."""


class ParameterDomainError(NestmcError, ValueError):
    """A distribution or model parameter is outside its legal domain."""


class ShapeError(NestmcError, ValueError):
    """A plan, input sequence, or problem has the wrong arity/depth."""


class NonFiniteValueError(NestmcError, ArithmeticError):
    """A level function produced a non-finite value during estimation."""

    def __init__(self, level: int, message: str = ""):
        self.level = level
        super().__init__(message or f"non-finite value produced at level {level}")


class BudgetOverflowError(NestmcError, OverflowError):
    """The product of per-level sample counts exceeds the supported range."""


class InfeasibleBudgetError(NestmcError, ValueError):
    """The total budget is too small to allocate at the requested depth."""


class LinearityError(NestmcError, ValueError):
    """The numeric linearity probe failed for an estimator that requires it."""


class MissingInputError(NestmcError, ValueError):
    """A required optional input (e.g. second-derivative bounds) is absent."""


class InsufficientDataError(NestmcError, ValueError):
    """Too few data points for the requested statistic."""


class UnsupportedProblemError(NestmcError, ValueError):
    """The problem is outside the scope of the requested operation."""


class IntegrationError(NestmcError, ArithmeticError):
    """An ODE integration produced a non-finite state."""


class HarnessError(NestmcError, RuntimeError):
    """A replicated run failed (e.g. too many non-finite replicates)."""
