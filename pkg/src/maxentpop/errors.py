"""Exception hierarchy shared by the library and the command line."""


class MaxEntError(Exception):
    """Base class for all errors raised by maxentpop."""


class DomainError(MaxEntError, ValueError):
    """An argument lies outside the supported domain of an operation."""


class InfeasibleError(DomainError):
    """The requested system totals cannot be reproduced by the model."""


class ConvergenceError(MaxEntError, RuntimeError):
    """An iterative procedure failed to converge.

    ``diagnostics`` carries whatever the failing routine knew at the time
    (iteration counts, best residuals, start points).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SimulationBlowUp(ConvergenceError):
    """A simulated population exceeded the configured ceiling."""


class ParseError(MaxEntError):
    """A panel file could not be parsed."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(MaxEntError, ValueError):
    """Structurally valid input that violates a data invariant.

    All problems found are kept in ``problems`` rather than stopping at the
    first one.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
