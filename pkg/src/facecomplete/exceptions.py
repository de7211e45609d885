"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigurationError -> 1 (usage),
DataError -> 2, anything else -> 3 (runtime).
"""


class ConfigurationError(ValueError):
    """Invalid configuration value (bad sigma, block size, missing weight, ...)."""


class DataError(Exception):
    """Dataset or annotation problem (missing file, corrupt label map, ...)."""

    def __init__(self, message, issues=None):
        super().__init__(message)
        self.issues = list(issues) if issues else []
