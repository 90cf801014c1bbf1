"""Exception hierarchy shared by the simulators and the CLI."""


class GGMoranError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(GGMoranError, ValueError):
    """An argument lies outside the domain of the operation."""

    exit_code = 2


class NumericInstabilityError(GGMoranError, ArithmeticError):
    """Cancellation could not be resolved even in extended precision."""

    exit_code = 3


class StepExplosionError(NumericInstabilityError):
    """Adaptive substepping exceeded its refinement budget."""


class InsufficientLengthError(DomainError):
    """A recorded path is too short for the requested time grid."""


class InsufficientSampleError(DomainError):
    """A sample is too small or degenerate for the requested estimator."""
