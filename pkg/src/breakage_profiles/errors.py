class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridMismatchError(ValueError):
    """Two objects were discretised on different grids."""


class ConfigError(ValueError):
    """A run configuration violates a parameter constraint or schema."""


class StiffnessError(RuntimeError):
    """The adaptive time step collapsed below the configured floor."""
