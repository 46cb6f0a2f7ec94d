"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ShapeError /
DomainError / SpecError -> 3, FitError / NumericError -> 4.
"""


class ShapeError(ValueError):
    """Inputs whose lengths or array shapes do not line up."""


class DomainError(ValueError):
    """Values outside their documented domain (e.g. scores not in [0, 1])."""


class SpecError(ValueError):
    """An invalid generator or regime specification."""


class ConfigError(ValueError):
    """An invalid experiment configuration (bad key, missing path, ...)."""


class FitError(RuntimeError):
    """A model or calibrator fit that cannot proceed (degenerate data)."""


class NumericError(RuntimeError):
    """A numeric routine failed to converge or produced invalid output."""
