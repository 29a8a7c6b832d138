"""Exception taxonomy shared by all dreamhone modules."""


class DreamhoneError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DreamhoneError):
    """Tensor or layer dimensions are incompatible."""


class InputError(DreamhoneError):
    """An argument is invalid for reasons other than shape."""


class UnknownLayerError(DreamhoneError, KeyError):
    """A layer name does not exist in the network."""


class CheckpointFormatError(DreamhoneError):
    """A checkpoint file is corrupt or truncated.

    ``offset`` is the byte position at which reading failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(DreamhoneError):
    """A checkpoint was written by an unsupported format version."""
