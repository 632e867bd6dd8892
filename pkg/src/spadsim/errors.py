"""Exception hierarchy shared by all modules."""


class SpadError(Exception):
    """Base class for every error raised by spadsim."""


class ConfigError(SpadError, ValueError):
    """Invalid configuration, scene, or argument value.

    ``field`` names the offending entry when it is known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class CapacityError(SpadError, ValueError):
    """Requested frame count exceeds the per-image counter capacity."""


class SaturationError(SpadError, ValueError):
    """Output count at or above saturation; the response cannot be inverted."""


class DimensionError(SpadError, ValueError):
    """Array shapes of scene, maps, or config disagree."""
