"""Exception hierarchy.

Each class carries the process exit code the command line uses for it, so
the CLI can map any library failure to a stable machine-readable category.
"""


class GmmError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"
    exit_code = 1


class ValidationError(GmmError, ValueError):
    """Input violates a structural invariant (weights, shapes, definiteness)."""

    category = "validation"
    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DimensionError(ValidationError):
    """Operands or points have incompatible dimensions."""


class FormatError(GmmError, ValueError):
    """Malformed document or unsupported format version."""

    category = "format"
    exit_code = 3

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class NumericalError(GmmError, ArithmeticError):
    """A computation left its numerically meaningful range."""

    category = "numeric"
    exit_code = 4


class SingularCovarianceError(NumericalError):
    """A covariance block to be solved against is singular or too ill-conditioned."""


class DisjointSupportError(NumericalError):
    """Fusion evidence or conditioning likelihood underflows to zero."""
