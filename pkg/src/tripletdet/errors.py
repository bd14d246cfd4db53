"""Exception hierarchy shared by every module."""


class TripletDetError(Exception):
    """Base class for all library errors."""


class ContractError(TripletDetError, ValueError):
    """An argument violates an operation's precondition."""


class GridFormatError(TripletDetError):
    """A CNGRID file or JSON document is malformed.

    The message always names the offending field.
    """


class ConfigError(TripletDetError):
    """A decode or run configuration is inconsistent with its inputs."""


class SpecError(TripletDetError):
    """A scene specification cannot be satisfied."""


class DegenerateBoxWarning(UserWarning):
    """A zero-area box took part in an overlap computation."""
