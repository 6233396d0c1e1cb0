"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid problem, parameter or run configuration."""


class DegenerateConstantError(ConfigurationError):
    """A Lipschitz profile that makes a derived constant undefined."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during evaluation or iteration."""

    def __init__(self, message, level=None, iteration=None):
        super().__init__(message)
        self.level = level
        self.iteration = iteration


class UnsupportedDiagnostic(RuntimeError):
    """The requested diagnostic needs ground truth the problem lacks."""
