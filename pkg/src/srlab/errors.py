"""Exception hierarchy shared by every srlab module."""


class SRLabError(Exception):
    """Base class for all srlab errors."""


class ConfigError(SRLabError):
    """Invalid configuration or hyper-parameter combination."""


class DataError(SRLabError):
    """Malformed or unusable dataset."""


class TreeStructureError(SRLabError):
    """Tree is not well formed for the requested operation."""


class TreeParseError(SRLabError):
    """Tree document could not be decoded.

    ``position`` is the character offset for syntax errors, or a node path
    (tuple of child indices) for structural errors.
    """

    def __init__(self, message, position=None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


class NumericFailure(SRLabError):
    """A numeric routine could not produce finite output."""
