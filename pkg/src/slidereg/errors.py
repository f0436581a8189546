"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not conform to its declared format."""


class DivergenceError(RuntimeError):
    """Numerical integration produced non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateCrossingError(RuntimeError):
    """A trajectory grazes a switching boundary; the crossing is ill-posed."""


class TangentialCrossingError(RuntimeError):
    """Transversality fails: the flow meets the boundary tangentially."""


class UnsupportedKernelError(ValueError):
    """The requested operation needs a kernel family with more smoothness."""
