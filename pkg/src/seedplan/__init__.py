"""Seed variety yield prediction and planting portfolio optimization."""

from .errors import (
    BudgetExceeded,
    ConfigError,
    ContractError,
    DataError,
    InfeasibleError,
    SeedplanError,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "ConfigError",
    "ContractError",
    "DataError",
    "InfeasibleError",
    "SeedplanError",
]
