"""Exception types shared across the package."""


class MaskclError(Exception):
    """Base class for all maskcl errors."""


class ConfigurationError(MaskclError):
    """Invalid configuration value or combination."""


class DimensionError(MaskclError):
    """Array shapes incompatible with a network, bank, or store."""


class DataError(MaskclError):
    """Bad input data: labels out of range, malformed dataset files."""


class FormatError(MaskclError):
    """Malformed binary container (mask file or snapshot)."""


class InvalidStateError(MaskclError):
    """Operation called on an object whose state does not permit it."""


class ResourceError(MaskclError):
    """A configured resource cap would be exceeded."""


class DomainError(MaskclError):
    """Numeric argument outside the mathematical domain of an operation."""
