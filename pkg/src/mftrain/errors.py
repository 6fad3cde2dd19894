"""Exception taxonomy shared across the package."""


class MFTrainError(Exception):
    """Base class for all package errors."""


class ConfigError(MFTrainError):
    """Invalid configuration: unsupported bit-width, unknown op name, bad config key."""


class InputError(MFTrainError, ValueError):
    """Invalid data fed to an operation: non-finite values, shape mismatch, empty input."""


class ShiftOverflowError(MFTrainError, OverflowError):
    """A shift left the fixed-point word: amount >= width, or result out of range."""


class ProtocolError(MFTrainError):
    """API misuse: backward without a matching forward, stale caches."""


class TrainingFault(MFTrainError):
    """Non-finite activations or gradients during training.

    Carries enough context to locate the blow-up.
    """

    def __init__(self, message: str, layer: int | None = None, step: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.step = step
