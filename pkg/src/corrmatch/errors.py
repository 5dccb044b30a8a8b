"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when a grid, config file, or training set is unusable."""


class FormatError(ValueError):
    """Raised when a serialized file has a bad magic, version, or shape."""
