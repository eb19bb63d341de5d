"""Exception types shared across the package."""


class InvalidShapeError(ValueError):
    """Tensor or image extents are incompatible with the requested operation."""


class InvalidArgumentError(ValueError):
    """A scalar argument is outside its allowed range."""


class TapeStateError(RuntimeError):
    """Gradient tape misuse: backward without a tape, a consumed tape, missing grads."""


class UnsupportedCFAError(ValueError):
    """The operation does not support the frame's color filter array."""


class FormatError(ValueError):
    """A binary container has a bad magic number, version or truncated payload."""
