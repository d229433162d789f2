class DualXError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"


class InvalidShapeError(DualXError, ValueError):
    kind = "invalid-shape"


class InvalidConfigError(DualXError, ValueError):
    kind = "invalid-config"


class InvalidScaleError(DualXError, ValueError):
    kind = "invalid-scale"


class NonFiniteError(DualXError, ArithmeticError):
    kind = "non-finite"


class UnsupportedFormatError(DualXError, ValueError):
    kind = "unsupported-format"


class TrainingDivergedError(DualXError, RuntimeError):
    kind = "diverged"
