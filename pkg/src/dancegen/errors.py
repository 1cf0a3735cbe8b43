"""Shared exception types.

The CLI maps these onto process exit codes: configuration and validation
problems exit 2, numerical failures exit 3. Library code raises them directly
so the mapping stays in one place.
"""


class ConfigurationError(ValueError):
    """A config value or combination of values is unusable."""


class ShapeError(ValueError):
    """A tensor has the wrong shape; the message names the offending axis."""


class FileFormatError(ValueError):
    """A serialized artifact (pose stream, tensor container) is malformed."""


class NumericalError(RuntimeError):
    """A numeric invariant broke (NaN loss, negative eigenvalue, ...)."""


class SequenceRejected(ValueError):
    """A pose sequence failed a data-quality gate.

    Carries the measured statistic so callers can log why the clip was
    dropped.
    """

    def __init__(self, message: str, fraction: float):
        super().__init__(message)
        self.fraction = fraction
