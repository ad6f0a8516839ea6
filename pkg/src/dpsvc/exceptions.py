class InvalidParameterError(ValueError):
    """An argument is outside the range an operation accepts."""


class InfeasibleScheduleError(ValueError):
    """A parameter schedule would spend more privacy budget than requested.

    Attributes
    ----------
    stage : int or None
        First stage at which the running (epsilon, delta) total overshoots.
    overshoot : tuple of float
        Amount by which the final totals exceed the requested budget.
    """

    def __init__(self, message, stage=None, overshoot=(0.0, 0.0)):
        super().__init__(message)
        self.stage = stage
        self.overshoot = overshoot
