"""Exception types raised across the package."""


class IdsrError(Exception):
    """Base class for all package errors."""


class ShapeError(IdsrError, ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(IdsrError, ValueError):
    """A NaN or infinity reached a tensor, gradient or loss."""


class FormatError(IdsrError, ValueError):
    """A file could not be parsed.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(FormatError):
    """Checkpoint header, payload or shape validation failed."""


class ConfigError(IdsrError, ValueError):
    """Invalid run configuration."""


class TrainingDiverged(IdsrError, RuntimeError):
    """Training produced a non-finite loss.

    ``network`` holds the parameters from the last epoch that finished
    with a finite loss; ``epoch`` is that epoch's index.
    """

    def __init__(self, message, network=None, epoch=0):
        super().__init__(message)
        self.network = network
        self.epoch = epoch
