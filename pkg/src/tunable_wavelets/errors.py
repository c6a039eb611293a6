"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter is outside the domain an operation accepts."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operator was built for."""


class TrainingDivergedError(RuntimeError):
    """A loss became NaN or infinite during training."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
