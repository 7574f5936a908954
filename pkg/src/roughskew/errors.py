"""Exception hierarchy shared by all modules."""


class RoughSkewError(Exception):
    """Base class for errors raised by this package."""


class PriceBandError(RoughSkewError, ValueError):
    """Option price outside the no-arbitrage band.

    ``bound`` is ``"lower"`` when the price is at or below intrinsic value and
    ``"upper"`` when it reaches the spot (calls) or strike (puts).
    """

    def __init__(self, message: str, bound: str):
        super().__init__(message)
        self.bound = bound


class DegenerateInputError(RoughSkewError, ValueError):
    """Input at a point where the requested quantity is undefined."""


class GridError(RoughSkewError, ValueError):
    """Time grid does not cover or resolve the requested interval."""


class QuoteError(RoughSkewError, ValueError):
    """Market quote requested outside the region where the quote rule applies."""


class NumericalError(RoughSkewError, ArithmeticError):
    """A numerical routine failed (non-convergence, loss of definiteness, ...)."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap without converging."""


class ContractRefusal(RoughSkewError):
    """The experiment is degenerate and the requested statistic is not defined."""
