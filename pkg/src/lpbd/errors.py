"""Exception types shared across the package."""


class LpbdError(Exception):
    """Base class for all lpbd errors."""


class ConfigError(LpbdError, ValueError):
    """Invalid configuration value or violated precondition."""


class ShapeMismatchError(LpbdError, ValueError):
    """Two rasters that must share a shape do not."""


class DataFormatError(LpbdError):
    """A data file does not match its declared format."""


class IdxFormatError(DataFormatError):
    """IDX magic/dimension header is wrong."""


class IdxTruncationError(DataFormatError):
    """IDX payload shorter than the header promises."""


class IdxCountError(DataFormatError):
    """Image and label files disagree on the sample count."""


class PpmFormatError(DataFormatError):
    """PPM/PGM header is malformed or unsupported."""


class PpmTruncationError(DataFormatError):
    """PPM/PGM raster shorter than the header promises."""


class ModelIOError(LpbdError):
    """Model container could not be read or written."""


class ModelFormatError(ModelIOError):
    """Model file magic is wrong."""


class ModelVersionError(ModelIOError):
    """Model file magic is ours but the version is unsupported."""


class ModelTruncationError(ModelIOError):
    """Model file ends before all declared bytes."""


class TrainingDivergedError(LpbdError):
    """A gradient-descent loop produced a non-finite loss."""

    def __init__(self, step: int, loss: float, what: str = "epoch"):
        super().__init__(f"non-finite loss at {what} {step}: {loss}")
        self.step = step
        self.loss = loss
