"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration object violates its contract; message names the field."""


class DataFormatError(ValueError):
    """An external data file is malformed; message carries the offending line."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap; message carries residuals."""
