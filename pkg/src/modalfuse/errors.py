"""Exception hierarchy shared by the kernels, file formats and CLI."""


class FuseError(Exception):
    """Base class for every error raised by modalfuse."""


class ConfigError(FuseError):
    """Structural hyperparameters are inconsistent (groups, ratios, kernel sizes)."""


class ShapeError(FuseError):
    """Tensor extents do not satisfy an operation's precondition."""


class DataError(FuseError):
    """Tensor contents are invalid, e.g. a negative running variance."""


class FormatError(FuseError):
    """A tensor file or weight archive is malformed."""


class VersionError(FormatError):
    """A file declares a version or dtype this build cannot read."""


class TrainingError(FuseError):
    """Optimisation diverged."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class InternalError(FuseError):
    """An invariant of the differentiation machinery was violated."""
