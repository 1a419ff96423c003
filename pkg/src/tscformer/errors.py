"""Exception taxonomy shared by every module.

The CLI maps ValidationError (and subclasses) to exit code 1 and
NumericError to exit code 2.
"""


class ValidationError(ValueError):
    """Invalid values, labels, or arguments."""


class DimensionError(ValidationError):
    """Shape or extent mismatch; message names the offending shapes."""


class ConfigError(ValidationError):
    """Bad or inconsistent configuration."""


class ParseError(ValidationError):
    """Malformed input data; message carries the line or byte offset."""


class OrderingError(ParseError):
    """Timestamps out of order in an event stream."""


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required (NaN loss,
    exploding gradients, failed gradient checks)."""
