"""Exception hierarchy shared by every volsynth module."""


class VolsynthError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VolsynthError, ValueError):
    """Operands have incompatible shapes."""


class SizeError(ShapeError):
    """A window, patch or decomposition does not fit the data it is applied to."""


class InvariantError(VolsynthError, ValueError):
    """A value violates a documented data invariant (e.g. NaN intensities)."""


class DomainError(VolsynthError, ValueError):
    """Input lies outside the domain an operation is defined on."""


class ConfigurationError(VolsynthError, ValueError):
    """A configuration object is inconsistent or incomplete."""


class ContractError(VolsynthError, RuntimeError):
    """An API was called in a way its contract forbids."""


class FormatError(VolsynthError, ValueError):
    """A file is not in the expected format."""


class UnsupportedFeatureError(FormatError):
    """A file uses a feature of its format that is not supported."""


class CorruptFileError(FormatError):
    """A file is truncated or internally inconsistent."""


class IncompatibleCheckpointError(VolsynthError, ValueError):
    """A checkpoint does not belong to the requested architecture."""


class DegenerateClusteringError(VolsynthError, ValueError):
    """Clustering was asked for more clusters than distinct values."""


class TrainingDivergedError(VolsynthError, FloatingPointError):
    """A loss became non-finite during optimization."""


class FoldPlanError(VolsynthError, ValueError):
    """A cross-validation plan leaks subjects or does not partition them."""
