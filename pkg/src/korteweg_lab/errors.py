"""Exception types shared across the lab."""


class ConfigurationError(ValueError):
    """Inputs violate a module precondition (bad grid, bad parameters, bad config)."""


class VacuumError(RuntimeError):
    """Density fell below the vacuum floor.

    ``state`` holds the last state that passed the floor check, ``rho_min`` the
    offending minimum.
    """

    def __init__(self, message: str, rho_min: float, state=None):
        super().__init__(message)
        self.rho_min = rho_min
        self.state = state


class StepFailure(RuntimeError):
    """A time step produced non-finite values; ``state`` is the last valid state."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state
