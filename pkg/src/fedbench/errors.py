"""Exception hierarchy shared across the harness.

The CLI maps :class:`ValidationError` to exit code 1 and every other
:class:`FedbenchError` to exit code 2.
"""


class FedbenchError(Exception):
    """Base class for harness errors."""


class ValidationError(FedbenchError, ValueError):
    """Bad input: a field is missing, out of range, or of the wrong type."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ConfigurationError(FedbenchError):
    """The environment cannot run what was asked (e.g. client binary missing)."""


class IntegrityError(FedbenchError):
    """Stored bytes do not match their recorded digest."""


class EndpointUnreachable(FedbenchError):
    """No TCP connection could be established to an endpoint."""

    def __init__(self, message, causes=()):
        super().__init__(message)
        self.causes = list(causes)
