"""
Exception hierarchy for dfrelay.

The CLI maps these onto exit codes: validation → 2, numerical → 3,
verification → 4.
"""
from typing import Optional


class DfRelayError(Exception):
    """Base class for every error raised by dfrelay."""


class ValidationError(DfRelayError, ValueError):
    """Invalid parameters or inputs."""


class DegenerateGeometryError(ValidationError):
    """Two nodes closer than the minimum resolvable distance."""


class ConstraintViolationError(ValidationError):
    """A power allocation breaks the source or relay budget."""


class DomainError(ValidationError):
    """An argument lies outside the domain of a closed form."""


class EmptyGridError(ValidationError):
    """A search or sweep grid with no points."""


class NumericalFailureError(DfRelayError, RuntimeError):
    """A numerical routine could not deliver the requested accuracy."""

    def __init__(self, message: str, achieved_tolerance: Optional[float] = None):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class InternalContradictionError(NumericalFailureError):
    """A quantity that is provably nonnegative came out negative."""


class InsufficientTrialsError(NumericalFailureError):
    """Monte Carlo run produced no events to estimate from."""


class VerificationFailure(DfRelayError):
    """One or more closed-form-vs-oracle checks failed."""
