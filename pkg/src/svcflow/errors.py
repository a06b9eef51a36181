"""Exception hierarchy shared across the package.

Input problems (bad shapes, missing layers, malformed files) derive from
``InputError`` so the CLI can map them to exit code 1; everything else is
an internal failure.
"""


class SvcError(Exception):
    """Base class for all package errors."""


class InputError(SvcError, ValueError):
    """Invalid user-supplied data."""


class ConfigError(InputError):
    """Inconsistent or unsupported configuration."""


class ShapeError(InputError):
    """Tensor shapes are incompatible for an operation."""


class SchemaError(InputError):
    """A file or feature container lacks a required field."""


class AlignmentError(InputError):
    """Two frame-synchronous streams disagree on length or rate."""


class NoVoicingError(InputError):
    """A pitch contour has no voiced frames where some are required."""


class UndefinedCorrelationError(InputError):
    """Correlation requested on a zero-variance sequence."""


class SamplingError(SvcError):
    """The ODE sampler produced a non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonFiniteLossError(SvcError):
    """A training loss evaluated to NaN or inf."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
