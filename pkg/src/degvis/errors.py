"""Exception types shared across the package."""


class DegvisError(Exception):
    """Base class for all package errors."""


class DomainError(DegvisError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class StructuralError(DegvisError, ValueError):
    """Arrays, grids or series have incompatible shapes or layouts."""


class ConstructionError(DegvisError, ValueError):
    """Initial data cannot be built to satisfy the required hypotheses."""

    def __init__(self, message, limiting_amplitude=None):
        super().__init__(message)
        self.limiting_amplitude = limiting_amplitude


class ConfigError(DegvisError, ValueError):
    """An experiment configuration is malformed; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class PositivityLossError(DegvisError, RuntimeError):
    """Density became nonpositive (or non-finite) during integration."""

    def __init__(self, node, time, state=None, value=None):
        super().__init__(
            f"density lost positivity at node {node} (t={time:.6g}, rho={value!r})"
        )
        self.node = node
        self.time = time
        self.state = state
        self.value = value


class InsufficientDataError(DegvisError, ValueError):
    pass


class IncompleteCampaignError(DegvisError, RuntimeError):
    """Runs required by a verdict are missing or did not complete."""

    def __init__(self, gaps):
        super().__init__("incomplete campaign, missing or failed runs: " + ", ".join(gaps))
        self.gaps = list(gaps)


class UserAbort(DegvisError):
    """Raised by an observer to stop a run early."""
