"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message, position=None, line=None):
        self.position = position
        self.line = line
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif position is not None:
            where = f" (at position {position})"
        super().__init__(message + where)


class InvalidState(RuntimeError):
    pass


class UnsupportedFeature(NotImplementedError):
    pass


class MissingParameter(KeyError):
    pass


class ConvergenceError(RuntimeError):
    """Raised when an iterative method runs out of iterations.

    ``history`` carries whatever the method recorded (residuals, energies,
    best Ritz residuals) so callers can report it.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class BracketError(ValueError):
    pass
