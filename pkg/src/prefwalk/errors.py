"""Exception hierarchy shared by every module."""


class PrefwalkError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ParameterError(PrefwalkError, ValueError):
    """Invalid argument or configuration value."""

    exit_code = 2


class RankDeficiencyError(PrefwalkError):
    """A Laplacian solve was requested on a disconnected graph."""


class NumericalError(PrefwalkError, ArithmeticError):
    """A quantity that must be positive or finite was not."""


class OptimizationError(NumericalError):
    """Score fitting diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContractError(PrefwalkError):
    """Cross-fitting contract violated (e.g. a model saw its own evaluation fold)."""

    exit_code = 1
