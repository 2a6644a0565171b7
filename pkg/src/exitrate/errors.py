"""Exception hierarchy. Everything raised on purpose derives from ExitRateError."""


class ExitRateError(Exception):
    pass


class RangeError(ExitRateError, IndexError):
    pass


class NumericalError(ExitRateError):
    pass


class EllipticityError(ExitRateError):
    pass


class DomainError(ExitRateError, ValueError):
    pass


class GeometryError(ExitRateError):
    pass


class SimulationError(ExitRateError):
    def __init__(self, message, trial=None):
        super().__init__(message)
        self.trial = trial


class HorizonError(ExitRateError):
    pass


class EmptySampleError(ExitRateError):
    pass


class PathError(ExitRateError, ValueError):
    pass


class NonConvergenceError(ExitRateError):
    def __init__(self, message, best_value=None):
        super().__init__(message)
        self.best_value = best_value


class PreconditionError(ExitRateError, ValueError):
    pass


class SolverError(ExitRateError):
    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class PositivityError(ExitRateError):
    pass


class ConfigurationError(ExitRateError):
    pass


class ConfigParseError(ConfigurationError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigValidationError(ConfigurationError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.constraint = message
