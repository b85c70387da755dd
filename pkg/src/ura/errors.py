"""Exception hierarchy shared across the toolkit."""


class UraError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(UraError):
    """Invalid configuration value, unknown key, or inconsistent layer arithmetic."""


class DataError(UraError):
    """Missing or malformed input data (files, datasets, reports)."""


class GeometryError(UraError):
    """Shape or dimension mismatch between values that must agree."""


class FormatError(UraError):
    """Corrupt or unrecognized serialized artifact (flow field, parameter file)."""


class NumericError(UraError):
    """Non-finite value where a finite one is required (e.g. training loss)."""
