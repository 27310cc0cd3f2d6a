"""Exception hierarchy and warnings shared by all modules.

Every error carries a short machine-readable ``code`` used by the CLI to
emit structured error JSON and pick exit codes.
"""

from __future__ import annotations


class StencilkitError(Exception):
    """Base class for all library errors."""

    code = "internal-error"
    #: errors caused by bad user input / infeasible requests exit with 2
    user_error = False


# ---------------------------------------------------------------------------
# scalar module

class PoleError(StencilkitError, ZeroDivisionError):
    code = "gamma-pole"
    user_error = True


class RangeError(StencilkitError, OverflowError):
    """Argument outside the supported evaluation range (overflow/underflow)."""

    code = "argument-range"
    user_error = True


class PrecisionLossError(StencilkitError, ArithmeticError):
    """Cancellation exhausted the working precision even after boosting."""

    code = "precision-loss"


class UnsupportedOrderError(StencilkitError, ValueError):
    code = "unsupported-order"
    user_error = True


# ---------------------------------------------------------------------------
# linalg module

class ConvergenceError(StencilkitError, ArithmeticError):
    """Iteration cap reached; usually signals too low a working precision."""

    code = "svd-no-convergence"


class InconsistentSystemError(StencilkitError, ValueError):
    """Right-hand side not in the numerical range of the matrix."""

    code = "inconsistent-system"

    def __init__(self, msg: str, residual=None):
        super().__init__(msg)
        self.residual = residual


class SingularMatrixError(StencilkitError, ZeroDivisionError):
    code = "singular-matrix"


class RankDeficientConstraintsError(StencilkitError, ValueError):
    """Constraint matrix lost row rank: node set not unisolvent at this order."""

    code = "rank-deficient-constraints"
    user_error = True


# ---------------------------------------------------------------------------
# kernels / functionals

class SingularAtOriginError(StencilkitError, ValueError):
    """Coincident-point limit of a kernel derivative does not exist."""

    code = "singular-at-origin"
    user_error = True


class ContinuityError(StencilkitError, ValueError):
    """Functional not continuous on the requested smoothness space."""

    code = "continuity-violation"
    user_error = True


class ExactnessViolationError(StencilkitError, ValueError):
    """Quadratic form of a conditionally positive definite kernel requested
    for a functional that does not annihilate the required polynomials."""

    code = "exactness-violation"
    user_error = True


# ---------------------------------------------------------------------------
# stencils / analysis

class InfeasibleOrderError(StencilkitError, ValueError):
    code = "infeasible-order"
    user_error = True

    def __init__(self, msg: str, residual=None):
        super().__init__(msg)
        self.residual = residual


class InsufficientReproductionError(StencilkitError, ValueError):
    code = "insufficient-reproduction"
    user_error = True


class NonUniqueStencilError(StencilkitError, ValueError):
    code = "non-unique-stencil"
    user_error = True


class NegativeFormError(StencilkitError, ArithmeticError):
    """Quadratic form negative beyond tolerance: working precision exhausted."""

    code = "negative-form"


class QuadratureToleranceError(StencilkitError, ArithmeticError):
    code = "quadrature-tolerance"


# ---------------------------------------------------------------------------
# CLI / configuration

class ConfigError(StencilkitError, ValueError):
    code = "config-error"
    user_error = True


class NodeFileError(StencilkitError, ValueError):
    code = "node-file-error"
    user_error = True


# ---------------------------------------------------------------------------
# warnings

class IllConditionedWarning(UserWarning):
    """Linear solve lost more than half of the working digits."""


class ClampedFormWarning(UserWarning):
    """A slightly negative quadratic form was clamped to zero."""
