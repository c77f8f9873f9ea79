"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
ComputeError -> 3.
"""


class FcmeshError(Exception):
    pass


class ConfigError(FcmeshError):
    """Invalid configuration or parameters."""


class DataError(FcmeshError):
    """Malformed or inconsistent input data."""


class FormatError(DataError):
    """File does not parse under the declared format."""


class ComputeError(FcmeshError):
    """A numerical stage failed."""


class ZeroVarianceError(DataError):
    """A time series has zero variance where a correlation is required."""
