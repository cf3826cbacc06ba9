"""Exception hierarchy shared across the package."""


class GsnError(Exception):
    """Base class for every error raised by gsniqa."""


class DimensionError(GsnError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(GsnError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(GsnError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class FormatError(GsnError, ValueError):
    """A file on disk does not follow the expected layout."""


class ConfigConflictError(GsnError, ValueError):
    """Stored configuration disagrees with the configuration requested."""


class InputError(GsnError, ValueError):
    """User supplied data (images, patches) cannot be processed."""
