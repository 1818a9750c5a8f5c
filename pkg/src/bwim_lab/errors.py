"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class NumericalError(ArithmeticError):
    """A NaN/Inf appeared, a solve was singular, or training diverged."""
