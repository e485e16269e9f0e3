"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ContractError(ValueError):
    """A caller broke an operation's precondition (missing entries, wrong shapes)."""


class BudgetExceededError(RuntimeError):
    """Exhaustive enumeration would visit more nodes than the configured budget."""


class ProtocolError(RuntimeError):
    """An agent or mechanism misbehaved during a protocol run."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class ConfigurationError(ValueError):
    """A scenario or configuration is malformed or unsupported."""


class RangeWarning(UserWarning):
    """Inputs fall outside the range an analysis assumes (flagged, not clamped)."""
