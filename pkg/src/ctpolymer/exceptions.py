"""Exception types shared across the package."""


class CtpolymerError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CtpolymerError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SizeError(CtpolymerError, ValueError):
    """A problem instance exceeds a configured size guard.

    The ``required`` attribute carries the computed size when known.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class SnapshotError(CtpolymerError, ValueError):
    """A serialized environment could not be parsed."""


class ConfigError(CtpolymerError, ValueError):
    """An experiment configuration is invalid.

    ``keys`` lists the offending configuration keys.
    """

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)
