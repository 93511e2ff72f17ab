"""Exception hierarchy shared across the package.

Validation problems (bad inputs, mismatched shapes, corrupt files) map to CLI
exit code 1; anything else that escapes is a runtime failure (exit code 2).
"""


class FreqcastError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FreqcastError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(FreqcastError, ValueError):
    """Operands have incompatible shapes or channel counts."""


class SymmetryError(FreqcastError, ValueError):
    """A spectrum expected to be conjugate-symmetric is not."""


class CorruptDatasetError(FreqcastError, ValueError):
    """Dataset payload disagrees with its manifest (size, checksum, version)."""


class TrainingDivergenceError(FreqcastError, RuntimeError):
    """Loss or a gradient became non-finite during optimization."""


class UndefinedMetricError(FreqcastError, ValueError):
    """Metric has no defined value for this input (e.g. zero-anomaly ACC)."""


VALIDATION_ERRORS = (InvalidInputError, ShapeError, SymmetryError, CorruptDatasetError)
