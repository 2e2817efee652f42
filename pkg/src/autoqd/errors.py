"""Exception types shared across the package."""


class AutoQDError(Exception):
    """Base class for package errors."""


class ConfigurationError(AutoQDError, ValueError):
    """Inputs have the wrong shape, dimension or an invalid setting."""


class DomainError(AutoQDError, ValueError):
    """A numeric argument lies outside the domain of the operation."""


class ResourceError(AutoQDError, RuntimeError):
    """A problem exceeds a configured size cap."""
