class ShapeError(ValueError):
    """Raised when an array does not have the dimension an operation expects."""


class NumericalError(FloatingPointError):
    """Raised when a non-finite value would otherwise propagate."""


class BufferStateError(RuntimeError):
    pass


class EnvStateError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass
