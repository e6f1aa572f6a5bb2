"""Exception types raised across the package."""


class CosmixError(Exception):
    """Base class for all package errors."""


class LengthMismatch(CosmixError, ValueError):
    pass


class NonFiniteCoordinate(CosmixError, ValueError):
    pass


class UnknownClassId(CosmixError, ValueError):
    pass


class IoFailure(CosmixError, OSError):
    pass


class TruncatedFile(CosmixError, ValueError):
    pass


class CountMismatch(CosmixError, ValueError):
    pass


class DuplicateSource(CosmixError, ValueError):
    pass


class MalformedLine(CosmixError, ValueError):
    pass


class IncompleteMap(CosmixError, ValueError):
    pass


class UnmappedClass(CosmixError, ValueError):
    pass


class MissingPaletteEntry(CosmixError, KeyError):
    pass


class EmptyDataset(CosmixError, ValueError):
    pass


class EmptySelectionPool(CosmixError, ValueError):
    pass


class EmptySample(CosmixError, ValueError):
    pass


class AllIgnored(CosmixError, ValueError):
    pass


class NonFiniteGradient(CosmixError, FloatingPointError):
    pass


class NonFiniteLoss(CosmixError, FloatingPointError):
    pass


class NonPositiveVoxel(CosmixError, ValueError):
    pass


class ShapeMismatch(CosmixError, ValueError):
    pass


class ConfigError(CosmixError, ValueError):
    pass
