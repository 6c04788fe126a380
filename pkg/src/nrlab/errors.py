"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Inputs violate an operation's preconditions (dimension mismatch etc.)."""


class AssumptionViolationError(ValueError):
    """A quantity required by the escape-dynamics analysis degenerates (e.g. gamma = 0)."""


class InfeasibleRescaleError(ValueError):
    """A requested neuron-scale ratio cannot be reached by per-neuron rescaling."""


class ConfigError(ValueError):
    """An experiment configuration document is malformed or inconsistent."""
