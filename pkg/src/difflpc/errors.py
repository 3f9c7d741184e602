"""Exception types shared across the package."""


class DspError(Exception):
    """Base class for all package-specific errors."""


class FormatError(DspError, ValueError):
    """Unsupported or corrupt audio file content."""


class DegenerateFrameError(DspError, ValueError):
    """Autocorrelation sequence unusable (r[0] <= 0)."""


class InstabilityError(DspError, ArithmeticError):
    """Synthesis produced a non-finite sample.

    Attributes:
        index: position of the first bad sample, if known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RootFindingError(DspError, RuntimeError):
    """Polynomial root refinement failed to reach the residual target.

    Attributes:
        residual: best residual achieved before giving up.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EmptyUtteranceError(DspError, ValueError):
    """No audio left after silence trimming."""


class InsufficientSignalError(DspError, ValueError):
    """Signal too short for the requested metric."""


class ManifestError(DspError, ValueError):
    """Corpus manifest record missing required fields."""
