"""Error taxonomy shared by the data layer and the CLI.

Exit-code mapping: ConfigError -> 2 (usage/config), DataFormatError -> 3
(data/format), NumericalError -> 4 (non-finite loss, failed gradient check).
Operation-level DimensionError/ParameterError/UsageError live in tensor.py.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataFormatError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(RuntimeError):
    """A numerical failure that invalidates the run."""
