"""Exception types shared across the package."""


class TstopicsError(Exception):
    """Base class for all package errors."""


class ParameterError(TstopicsError):
    """A hyperparameter or model parameter is outside its legal domain."""


class ShapeError(TstopicsError):
    """Array dimensions are inconsistent with the operation's contract."""


class ConditioningError(TstopicsError):
    """A matrix required to be positive definite could not be factorized."""


class LabelMaskError(TstopicsError):
    """A supervision mask is structurally invalid (e.g. all zeros)."""


class NumericalError(TstopicsError):
    """A non-finite value appeared where the algorithm requires finiteness."""


class CorpusFormatError(TstopicsError):
    """A corpus or metadata file violates the documented format."""


class SeriesTooShortError(TstopicsError):
    """A series is shorter than the preprocessing window requires."""


class CheckpointError(TstopicsError):
    """A checkpoint or archive file could not be read back."""


class CheckpointVersionError(CheckpointError):
    """The file was written with an incompatible schema version."""


class CheckpointCorruptError(CheckpointError):
    """The file failed its integrity check; no partial state is returned."""


class ConfigError(TstopicsError):
    """A run configuration is invalid or references missing inputs."""
