"""Exception hierarchy.

Configuration problems subclass ``ValueError`` and numerical failures subclass
``ArithmeticError`` so callers can catch either family with builtin types.
"""


class RobustVolError(Exception):
    """Base class for all errors raised by robustvol."""


class ConfigurationError(RobustVolError, ValueError):
    """Inputs are inconsistent with the requested computation."""


class ScenarioValidationError(ConfigurationError):
    """A scenario document violates the schema or a hard invariant."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class UnsupportedConfigurationError(ConfigurationError):
    """The requested regime has no implemented value-function representation."""


class MarketIncompletenessError(ConfigurationError):
    """The option loading matrix is singular or too badly conditioned to invert."""


class DomainError(ConfigurationError):
    """A state variable lies outside the domain of the formula."""


class NumericalError(RobustVolError, ArithmeticError):
    """Base class for numerical failures."""


class ExplosiveSolutionError(NumericalError):
    """Riccati discriminant is negative; the solution blows up in finite time."""


class RiccatiPoleError(NumericalError):
    """Closed-form Riccati denominator vanishes."""


class BlowUpError(NumericalError):
    """ODE integration left the bounded region."""


class QuadratureError(NumericalError):
    """Fourier inversion did not converge."""


class ModelBreakdownError(NumericalError):
    """The moment-matched square-root approximation produced a negative variance rate."""


class SeriesConvergenceError(NumericalError):
    """A series expansion did not converge within its term budget."""


class SimulationError(NumericalError):
    """Too many Monte Carlo paths were flagged as invalid."""
