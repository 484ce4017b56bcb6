"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model, experiment, or CLI configuration."""


class BudgetExceeded(ConfigError):
    """A requested tensor would exceed the configured memory budget."""

    def __init__(self, n_entries: int, budget: int):
        super().__init__(
            f"coupling tensor needs {n_entries} stored entries, budget is {budget}"
        )
        self.n_entries = n_entries
        self.budget = budget


class NumericalError(RuntimeError):
    """A numerical routine failed (bracketing, non-finite values, ...)."""
