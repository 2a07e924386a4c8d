"""Exception types shared across the package."""

from __future__ import annotations


class OTTearsError(Exception):
    """Base class for all package errors."""


class DomainError(OTTearsError):
    """Evaluation outside the represented domain (grid box, empty fiber)."""


class NonConvexInputError(OTTearsError):
    """1D samples violate convexity beyond tolerance.

    Carries the worst offending index and second-difference value.
    """

    def __init__(self, message, index=None, second_difference=None):
        super().__init__(message)
        self.index = index
        self.second_difference = second_difference


class NoSeparationError(OTTearsError):
    """Two point clouds are not strictly linearly separable.

    ``witness`` is the closest cross pair ((plus point, minus point), distance).
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SeparationViolationError(OTTearsError):
    """A subgradient fell on the wrong side of the separating frame."""

    def __init__(self, message, witness_point=None, witness_slope=None):
        super().__init__(message)
        self.witness_point = witness_point
        self.witness_slope = witness_slope


class CertificateError(OTTearsError):
    """A certified inequality chain failed; carries the witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SolverError(OTTearsError):
    """Semidiscrete solver did not reach the requested tolerance."""

    def __init__(self, message, worst_residual=None, iterations=None):
        super().__init__(message)
        self.worst_residual = worst_residual
        self.iterations = iterations


class PreconditionError(OTTearsError):
    """A stated precondition of an analysis was violated; carries details."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details


class ScenarioError(OTTearsError):
    """Scenario file failed schema validation (CLI exit code 2)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
