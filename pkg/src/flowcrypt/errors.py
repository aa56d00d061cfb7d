"""Exception types shared across the package.

The CLI maps these onto its exit codes, so library code should raise the
most specific one that applies.
"""


class FlowcryptError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(FlowcryptError, ValueError):
    """A parameter is outside its documented domain."""


class ShapeMismatchError(FlowcryptError, ValueError):
    """Operands have incompatible dimensions, or a label has no context."""


class DegenerateDataError(FlowcryptError, ValueError):
    """Training data cannot be used (e.g. a zero-variance dimension)."""


class CorruptFileError(FlowcryptError, IOError):
    """A file failed its CRC check or its content validation."""
