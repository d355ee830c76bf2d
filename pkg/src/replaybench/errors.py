"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
InvariantError -> 4.
"""


class ReplayBenchError(Exception):
    """Base class for all package errors."""


class ConfigError(ReplayBenchError):
    """Invalid or inconsistent configuration."""


class DataError(ReplayBenchError):
    """Malformed, missing, or contract-violating input data."""


class InvariantError(ReplayBenchError):
    """An internal invariant was violated; indicates a bug."""
