"""Exception types shared across the package."""


class DetfiltError(Exception):
    """Base class for errors raised by detfilt."""


class ConfigurationError(DetfiltError, ValueError):
    """Invalid configuration (bad eta, mismatched operands, unknown keys)."""


class DomainError(DetfiltError, ValueError):
    """Numeric input outside an operation's domain."""


class CollapseError(DetfiltError, RuntimeError):
    """All particle weights are zero; the caller must reset the filter."""
