"""Exception hierarchy shared by all modules."""


class Se3FlowError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(Se3FlowError, ValueError):
    pass


class LogDomainError(Se3FlowError):
    """A transform lies too close to the log cut (rotation angle near pi)."""

    def __init__(self, message, pixel=None):
        if pixel is not None:
            message = f"{message} at pixel (row={pixel[0]}, col={pixel[1]})"
        super().__init__(message)
        self.pixel = pixel


class ProjectionDomainError(Se3FlowError):
    pass


class SolverError(Se3FlowError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericError(Se3FlowError):
    def __init__(self, message, pixel=None):
        if pixel is not None:
            message = f"{message} at pixel (row={pixel[0]}, col={pixel[1]})"
        super().__init__(message)
        self.pixel = pixel


class FormatError(Se3FlowError):
    pass


class ConfigError(Se3FlowError):
    pass


class PipelineError(Se3FlowError):
    """Wraps a module error with the (scale, iteration) it occurred at."""

    def __init__(self, scale, iteration, cause):
        super().__init__(f"scale {scale}, iteration {iteration}: {cause}")
        self.scale = scale
        self.iteration = iteration
        self.cause = cause
