"""Exception types shared across the package."""


class FofeqaError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(FofeqaError, ValueError):
    """An argument is outside its documented domain."""


class NotAValidCodeError(FofeqaError, ValueError):
    """A vector is not the encoding of any token sequence."""


class UnsupportedAlphaError(FofeqaError, ValueError):
    """Decoding requested for a forgetting factor the decoder cannot invert."""


class UnknownEntityError(FofeqaError, KeyError):
    """An entity id is not present in the knowledge base."""


class TrainingDivergedError(FofeqaError, RuntimeError):
    """Gradients or parameters stopped being finite during training."""


class FileFormatError(FofeqaError, ValueError):
    """A data file violates its expected line format."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ConfigError(FofeqaError, ValueError):
    """A run configuration contains unknown keys or out-of-range values."""
