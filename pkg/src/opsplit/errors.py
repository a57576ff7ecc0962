"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class NumericInputError(ArithmeticError):
    """A callback produced a non-finite value."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class LinearSolverError(RuntimeError):
    pass


class NoConvergenceError(RuntimeError):
    """Iteration cap reached; ``residual`` and ``report`` describe the last iterate."""

    def __init__(self, message, residual=None, report=None):
        super().__init__(message)
        self.residual = residual
        self.report = report


class StagnationError(NoConvergenceError):
    pass


class StepError(RuntimeError):
    """A time step failed. ``trajectory`` holds the states completed so far."""

    def __init__(self, message, step=None, trajectory=None, report=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory
        self.report = report
