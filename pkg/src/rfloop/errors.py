"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violates a documented precondition (shape, symmetry, range)."""


class ShapeError(ContractError):
    """Array dimensions are inconsistent with the operation's contract."""


class NumericError(RuntimeError):
    """A computation produced or received non-finite values."""


class BudgetError(RuntimeError):
    """A requested dense object exceeds the configured memory budget."""


class ConfigError(ValueError):
    """An experiment configuration is invalid or incomplete."""
