"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Array or layout dimensions do not agree."""


class ConfigError(ValueError):
    """Inconsistent or invalid run configuration."""


class FormatError(ValueError):
    """File is not a recognised container (bad magic or layout)."""


class VersionError(FormatError):
    """Container layout version is not supported."""


class CorruptFileError(FormatError):
    """Container is truncated or fails its integrity check."""
