"""
errors.py
---------
Exception types raised across the package.

Every error is a `ValueError` subclass so callers that only know the standard
library still catch them; the CLI maps `NfaError` to exit code 2.
"""


class NfaError(Exception):
    """Base class for all package errors."""


class DimensionError(NfaError, ValueError):
    """Operand dimensions do not fit the operation."""


class ShapeError(NfaError, ValueError):
    """A tensor has the wrong shape for its role (e.g. non-scalar loss)."""


class ParameterError(NfaError, ValueError):
    """An operation parameter is outside its legal range."""


class ConfigError(NfaError, ValueError):
    """A run configuration is malformed or inconsistent."""


class TensorFileError(NfaError, ValueError):
    """An NFAT tensor file cannot be decoded."""


class CheckpointError(NfaError, ValueError):
    """A checkpoint directory is missing, incomplete or corrupt."""


class DatasetError(NfaError, ValueError):
    """A dataset directory or sample file is missing or malformed."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path
