"""Exception types shared across the package."""


class AcflowError(Exception):
    """Common base so callers can catch any package-specific failure."""


class ShapeError(AcflowError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(AcflowError, ValueError):
    """Input values lie outside the operation's domain (non-finite, negative, ...)."""


class ParameterError(AcflowError, ValueError):
    """A layer or estimator parameter is out of its legal range."""


class ConvergenceError(AcflowError, RuntimeError):
    """Fixed-point iteration failed to reach tolerance.

    Carries the last residual so callers can tell a near-miss from a broken
    contraction certificate.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CertificateError(AcflowError, RuntimeError):
    """A contraction certificate was violated (nonpositive determinant, budget >= 1, ...)."""


class CheckpointFormatError(AcflowError, ValueError):
    """Checkpoint file is corrupt or has an unsupported version.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
