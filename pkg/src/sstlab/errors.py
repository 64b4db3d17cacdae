"""Exception hierarchy shared across the package."""


class SSTLabError(Exception):
    """Base class for all package errors."""


class ValidationError(SSTLabError):
    """A model, config or input failed validation."""


class NonSummableTail(SSTLabError):
    """A measure tail failed the numerical convergence test."""


class WindowExceeded(SSTLabError, IndexError):
    """A tabulated family was queried outside its window."""


class InvalidRates(ValidationError):
    """A rate was non-positive or non-finite on the declared support."""


class InconsistentReversibility(ValidationError):
    """Cycle products of rate ratios differ from 1."""


class EmptyCenter(ValidationError):
    """The graph has no vertex of degree other than two (pure line case)."""


class NotLocallyFinite(ValidationError):
    """Some vertex has unbounded degree."""


class DisconnectedGraph(ValidationError):
    pass


class NonSquare(ValidationError):
    pass


class BadRowSums(ValidationError):
    pass


class EmptyIntersection(SSTLabError):
    """Lambda row requested for a dual state carrying no primal mass."""


class OffSupport(SSTLabError):
    """Coupled state (x, x*) with Lambda(x*, x) = 0."""


class InconsistentInput(SSTLabError):
    pass


class AbsorbedState(SSTLabError):
    """Transitions requested from the absorbing dual state."""


class WindowTooSmall(SSTLabError):
    pass


class NotLambdaCompatible(SSTLabError):
    pass


class ConfigError(ValidationError):
    """Config parse or schema error; carries the offending line when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
