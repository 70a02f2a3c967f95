"""Exception hierarchy shared by all bridgeseg modules.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class BridgeSegError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BridgeSegError):
    """Invalid configuration detected before any computation runs.

    Covers graph construction with inconsistent shapes, invalid loss or
    scheme parameters, and malformed experiment configs.
    """


class UnsupportedGraphError(ConfigError):
    """A graph introspection helper was handed a graph it does not understand."""


class DataError(BridgeSegError):
    """A dataset or input tensor failed validation at load or feed time."""


class MhdParseError(DataError):
    """MetaImage header could not be parsed. The message names the offending key."""


class CorruptFileError(DataError):
    """Raw voxel payload does not match the header's declared geometry."""


class NumericalError(BridgeSegError):
    """Non-finite values appeared where the pipeline requires finite arithmetic."""


class MetricUndefinedError(BridgeSegError):
    """A metric is mathematically undefined for the given input (e.g. empty volume).

    Deliberately distinct from DataError so callers can record "undefined"
    instead of treating the case as a computation failure.
    """


class GraphUsageError(RuntimeError):
    """Graph API called out of order, e.g. backward before any forward pass."""
