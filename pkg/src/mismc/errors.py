"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class NumericalFailure(RuntimeError):
    """A numerical routine could not produce a finite answer (CLI exit code 3)."""
