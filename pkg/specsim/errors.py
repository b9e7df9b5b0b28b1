"""
Exceptions raised by the toolchain. All of them are RuntimeErrors.
"""


class SpecSimError(RuntimeError):
    pass


class ParseError(SpecSimError):
    """
    Syntax error in the textual IR. Carries the 1-based line number.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line " + str(line) + ": " + message
        super(ParseError, self).__init__(message)


class ValidationError(SpecSimError):
    pass


class RegionFormationError(SpecSimError):
    pass


class SimulationError(SpecSimError):
    pass


class BudgetExceeded(SimulationError):
    pass


class ConfigError(SpecSimError):
    pass


class TraceError(SpecSimError):
    pass
