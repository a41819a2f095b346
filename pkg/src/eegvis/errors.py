class ConfigError(ValueError):
    """Invalid configuration or arguments."""


class DataError(RuntimeError):
    """Dataset container is missing, corrupt or unusable for the request."""


class GeometryError(DataError):
    """Signal shape disagrees with the declared channels x timesteps geometry."""


class LeakageError(DataError):
    """Held-out classes were seen while training the encoder."""
