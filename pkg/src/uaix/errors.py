class UaixError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(UaixError, ValueError):
    """An array does not fit the network layer it is fed to."""

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class TrainingDiverged(UaixError, ArithmeticError):
    def __init__(self, epoch, step, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class NormalizationError(UaixError, ValueError):
    pass


class ContainerError(UaixError, IOError):
    """A tensor container file is malformed, truncated or of the wrong version."""

    def __init__(self, message, entry=None):
        if entry is not None:
            message = f"entry {entry!r}: {message}"
        super().__init__(message)
        self.entry = entry


class IdxFormatError(UaixError, ValueError):
    pass


class ConfigError(UaixError, ValueError):
    pass
