"""Exception hierarchy shared by the pipeline modules.

Each class carries the process exit code the CLI reports for it.
"""


class SeedplanError(Exception):
    exit_code = 1


class ConfigError(SeedplanError, ValueError):
    """Invalid configuration, schema or input file."""

    exit_code = 2


class ContractError(SeedplanError, ValueError):
    """A caller violated an operation's precondition."""

    exit_code = 2


class DataError(SeedplanError):
    """Not enough data to carry out the requested step."""

    exit_code = 3


class InfeasibleError(SeedplanError):
    exit_code = 3

    def __init__(self, message, min_variance=None):
        super().__init__(message)
        self.min_variance = min_variance


class BudgetExceeded(SeedplanError):
    """Exact enumeration would exceed the configured node budget."""

    exit_code = 4
