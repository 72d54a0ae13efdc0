"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input (action, state, parameter) lies outside its valid domain."""


class ConfigError(ValueError):
    """A configuration file or environment request is invalid."""


class CapacityError(RuntimeError):
    """A problem instance exceeds an enumeration guard."""


class InfeasibleError(RuntimeError):
    """No action satisfies the requested budget mode."""


class TrainingDivergenceError(RuntimeError):
    """The Q-network loss became non-finite or exceeded the divergence bound."""


class SolverError(RuntimeError):
    """An iterative solver failed to converge within its iteration cap."""
