"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A configuration value is invalid.

    ``path`` holds the dotted key path of the offending entry when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class ScenarioParseError(ConfigError):
    """The scenario file could not be parsed at all."""


class AllBinsFull(RuntimeError):
    """Every bin has zero residual space; the arrival overflows."""


class SimulationIntegrityError(RuntimeError):
    """An accounting invariant of the cup simulation was broken."""
