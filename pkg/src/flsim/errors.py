"""Exception hierarchy shared by every flsim module."""


class FLSimError(Exception):
    """Base class for all errors raised by flsim."""


class DimensionError(FLSimError, ValueError):
    """Parameter or feature vectors whose lengths do not line up."""


class EmptyDatasetError(FLSimError, ValueError):
    pass


class ConfigError(FLSimError, ValueError):
    """An invalid configuration value.

    ``key`` is the dotted path of the offending entry when known, so the CLI
    can point the user at it.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DataFormatError(FLSimError, ValueError):
    """A malformed input row. ``row`` is the 0-based data row index."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ThreatModelError(ConfigError):
    """Attack settings that the threat model rules out."""
