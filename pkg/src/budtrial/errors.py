"""Exception types raised across the package."""


class BudError(Exception):
    """Base class for all package errors."""


class FamilyMismatchError(BudError, TypeError):
    """An outcome or metric does not match the posterior family it is applied to."""


class MissingControlError(BudError, ValueError):
    """A controlled-design quantity was requested on a design without a control arm."""


class InvalidSpecError(BudError, ValueError):
    """A metric, policy or scenario specification violates its invariants."""


class LatticeTooLargeError(BudError, MemoryError):
    """The backward-induction lattice exceeds the configured state budget."""

    def __init__(self, n_states, budget):
        self.n_states = int(n_states)
        self.budget = int(budget)
        super().__init__(
            f"lattice needs {self.n_states:,} states, budget is {self.budget:,}"
        )


class EmptyRegionError(BudError, RuntimeError):
    """Monte Carlo draws never visited a region whose mass is needed."""


class ConfigError(BudError, ValueError):
    """Scenario configuration failed validation; ``errors`` holds path-qualified messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
