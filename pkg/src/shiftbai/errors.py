"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration. ``key`` names the offending config entry when known."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class TieInTruthError(ConfigError):
    pass


class DisconnectedDesignError(ValueError):
    """The arm co-observation graph is not connected, so arm means are not comparable."""


class SingularGramError(ArithmeticError):
    """Factorization failed even though the design is connected."""


class OutOfOrderEnvironmentError(ValueError):
    pass


class UnsampledArmError(ValueError):
    pass


class FitUnavailableError(RuntimeError):
    pass
