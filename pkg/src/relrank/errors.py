"""Shared exception types; the CLI maps these to categorized exit lines."""


class RelrankError(Exception):
    """Base class for all toolkit errors."""

    category = "error"


class ConfigError(RelrankError):
    """Invalid or inconsistent configuration."""

    category = "config"


class DataError(RelrankError):
    """Malformed or missing input data."""

    category = "data"
