class PlasticityError(Exception):
    pass


class ConfigError(PlasticityError, ValueError):
    """Invalid configuration; ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DimensionError(PlasticityError, ValueError):
    pass


class DivergenceError(PlasticityError, FloatingPointError):
    pass


class UsageError(PlasticityError, RuntimeError):
    pass
