"""Exception hierarchy.

Three families map onto the CLI exit codes: validation problems (1),
numerical failures (2) and file-format / IO problems (3).
"""


class WaveheadError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(WaveheadError, ValueError):
    exit_code = 1


class DimensionError(ValidationError):
    """Operand shapes do not line up."""


class NumericalError(WaveheadError, ArithmeticError):
    exit_code = 2


class SingularMatrixError(NumericalError):
    """A pivot fell below the working-precision threshold."""


class DegenerateStateError(NumericalError):
    """A complex state has (near) zero norm and cannot be normalised."""


class MeasurementCollapseError(NumericalError):
    """Every Born measurement amplitude vanished."""


class GradientCheckError(NumericalError):
    """Analytic and finite-difference gradients disagree."""


class FormatError(WaveheadError):
    """Malformed input file."""

    exit_code = 3


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, section, expected, got):
        super().__init__(
            f"truncated payload in section {section!r}: "
            f"expected {expected} bytes, found {got}"
        )
        self.section = section


class FlagSizeError(FormatError):
    """Header flags disagree with the payload size."""


class PayloadError(FormatError):
    """Payload decodes but holds invalid values (labels, NaNs, soft-label sums)."""


class SchemaError(FormatError):
    """CSV header or row layout does not match the documented schema."""
