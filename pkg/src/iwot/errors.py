"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination of values."""


class DataFormatError(ValueError):
    """Malformed dataset, checkpoint, or history file."""


class DegenerateInputError(ValueError):
    """Structurally valid input that is numerically unusable (zero norms, empty support)."""


class NumericalError(RuntimeError):
    """A solver failed or a numerical invariant was violated at runtime."""
