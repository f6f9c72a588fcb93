"""Exception types shared across the package."""


class BglstmError(Exception):
    """Base class for all package errors."""


class ShapeError(BglstmError, ValueError):
    """Operand dimensions are incompatible."""


class InvalidInputError(BglstmError, ValueError):
    """Input violates an operation's precondition (non-finite, empty, ...)."""


class ConfigError(BglstmError, ValueError):
    """A configuration object is internally inconsistent."""


class DegenerateDataError(BglstmError, ValueError):
    """Data has no usable signal (zero variance, all-zero errors, ...)."""


class ModelFormatError(BglstmError, ValueError):
    """A model file is structurally invalid."""


class BadMagicError(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class UnsupportedVersionError(ModelFormatError):
    """Model file declares a format version this build cannot read."""


class ChecksumError(ModelFormatError):
    """Model file payload does not match its stored checksum."""
