"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration: bad distribution parameters, empty windows, etc."""


class InputError(ValueError):
    """Malformed or incomplete input data."""


class NoCohortsError(RuntimeError):
    """No cohort survived stacking, so there is nothing to estimate."""


class ConvergenceError(RuntimeError):
    """IRLS failed to converge. ``trace`` holds the deviance at each iteration."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
