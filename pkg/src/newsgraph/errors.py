"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right type
matters for scripted runs: ConfigError -> 2, MissingArtifactError -> 3,
NumericError -> 4.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the contract forbids it."""


class ManifoldError(ValueError):
    """A point violates its manifold constraint (e.g. left the ball)."""


class ConfigError(ValueError):
    """Invalid configuration or record file."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream artifact does not exist."""
