"""Exception hierarchy; the CLI maps each class to a distinct exit code."""


class LandtileError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LandtileError):
    """Bad or missing configuration (exit code 2)."""


class RasterIOError(LandtileError):
    """Unreadable, corrupt, or unwritable raster files (exit code 3)."""


class ProtocolError(LandtileError):
    """Violation of the tile wire protocol by either side (exit code 4)."""


class BackendError(LandtileError):
    """Classifier backend failure, including child-process death (exit code 4)."""


class ValidationError(LandtileError):
    """Inconsistent in-memory data: shape mismatches, bad labels (exit code 5)."""
