"""robustvol - robust portfolio choice under two-factor stochastic volatility."""

__version__ = "0.1.0"

from robustvol.api import (
    correlated,
    detect,
    exposures,
    loss,
    simulate,
    sweep,
    validate,
    worst_case,
)
from robustvol.core.model import build_scenario, load_scenario

__all__ = [
    "__version__",
    "build_scenario",
    "correlated",
    "detect",
    "exposures",
    "load_scenario",
    "loss",
    "simulate",
    "sweep",
    "validate",
    "worst_case",
]
