"""Indirect utilities and wealth-equivalent utility losses of suboptimal strategies."""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import pandas as pd

from robustvol.core.model import ScenarioConfig
from robustvol.core.riccati import (
    ReductionMode,
    Regime,
    ValueCoefficients,
    closed_form_H,
    derive_complete_coeffs,
    solve_complete_system,
    solve_incomplete_system,
    solve_jump_system,
    solve_suboptimal_system,
    value_coefficients,
)
from robustvol.core.strategy import Exposures, exposures_from_H
from robustvol.errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["strategy", "tau", "v1", "v2", "dH1", "dH2", "dh", "loss"]


class Strategy(StrEnum):
    PI1 = "pi1"
    PI2 = "pi2"
    PI3 = "pi3"
    JUMP_IGNORE = "jump-ignore"


class Evaluation(StrEnum):
    """
    How a strategy that ignores one factor's ambiguity is scored.

    ADVERSARIAL keeps the true ambiguity parameters when solving for the
    strategy's value, so nature still distorts the ignored factor. LITERAL
    zeroes them in the value equations too, which scores the strategy in a
    world without that ambiguity.
    """

    ADVERSARIAL = "adversarial"
    LITERAL = "literal"


@dataclass(frozen=True)
class IndirectUtilitySample:
    t: float
    x: float
    v1: float
    v2: float
    value: float


@dataclass(frozen=True)
class UtilityLossReport:
    strategy: Strategy
    loss: float
    tau: float
    v1: float
    v2: float
    dH: tuple[float, float]
    dh: float

    def as_row(self) -> dict:
        return {
            "strategy": str(self.strategy),
            "tau": self.tau,
            "v1": self.v1,
            "v2": self.v2,
            "dH1": self.dH[0],
            "dH2": self.dH[1],
            "dh": self.dh,
            "loss": self.loss,
        }


@dataclass(frozen=True)
class PositivityAudit:
    passed: bool
    min_gap: tuple[float, float]
    witness: pd.DataFrame


def indirect_utility(
    scenario: ScenarioConfig,
    regime: Regime | str,
    t: float,
    x: float,
    v1: float,
    v2: float,
    values: ValueCoefficients | None = None,
) -> IndirectUtilitySample:
    """
    J(t, x, v1, v2) = x^(1-gamma)/(1-gamma) * exp(H1 v1 + H2 v2 + h) at tau = T - t.

    Raises:
        DomainError: If x <= 0, a variance is negative or t lies outside [0, T]
    """
    if x <= 0:
        raise DomainError(f"wealth must be > 0, got {x}")
    if v1 < 0 or v2 < 0:
        raise DomainError(f"variances must be >= 0, got v1={v1}, v2={v2}")
    if not 0 <= t <= scenario.horizon:
        raise DomainError(f"t={t} outside [0, {scenario.horizon}]")
    values = values or value_coefficients(scenario, regime)
    one_g = 1.0 - scenario.gamma
    exponent = float(values.exponent(scenario.horizon - t, v1, v2))
    return IndirectUtilitySample(t, x, v1, v2, x**one_g / one_g * math.exp(exponent))


def _ignoring_schedule(scenario: ScenarioConfig, factor: int):
    """Optimal exposures of an investor who sets one factor's ambiguity to zero."""
    believed = scenario.with_phi(factor, phi_s=0.0, phi_v=0.0)
    coeffs = derive_complete_coeffs(believed)

    def schedule(tau: float) -> Exposures:
        return exposures_from_H(
            believed, (closed_form_H(coeffs[0], tau), closed_form_H(coeffs[1], tau))
        )

    return believed, schedule


def _jump_ignore_schedule(scenario: ScenarioConfig):
    plain = scenario.without_jumps()
    coeffs = derive_complete_coeffs(plain)

    def schedule(tau: float) -> Exposures:
        base = exposures_from_H(
            plain, (closed_form_H(coeffs[0], tau), closed_form_H(coeffs[1], tau))
        )
        return Exposures(beta_s=base.beta_s, beta_v=base.beta_v, beta_n=0.0)

    return schedule


def strategy_values(
    scenario: ScenarioConfig,
    strategy: Strategy | str,
    evaluation: Evaluation | str = Evaluation.ADVERSARIAL,
) -> tuple[ValueCoefficients, ValueCoefficients]:
    """
    Value coefficients of a suboptimal strategy and of the optimum it is compared with.

    Returns:
        (suboptimal, optimal) ValueCoefficients

    Raises:
        ConfigurationError: If the strategy does not match the scenario's regime
    """
    strategy = Strategy(strategy)
    evaluation = Evaluation(evaluation)
    if strategy is Strategy.JUMP_IGNORE:
        if not scenario.has_jumps:
            raise ConfigurationError("jump-ignore strategy needs a scenario with jumps")
        optimal = solve_jump_system(scenario)
        suboptimal = solve_suboptimal_system(
            scenario, _jump_ignore_schedule(scenario), regime=Regime.JUMP_IGNORE
        )
        return suboptimal, optimal

    if scenario.has_jumps:
        raise ConfigurationError(f"strategy {strategy} is defined for the no-jump market only")
    if strategy is Strategy.PI3:
        # each factor keeps its own H-bar; no tradable stock weight is implied
        incomplete = solve_incomplete_system(scenario, ReductionMode.PER_FACTOR)
        return incomplete, solve_complete_system(scenario)

    factor = 0 if strategy is Strategy.PI1 else 1
    believed, schedule = _ignoring_schedule(scenario, factor)
    truth = believed if evaluation is Evaluation.LITERAL else scenario
    phi_tilde = (truth.prefs.phi_s, truth.prefs.phi_v)
    regime = Regime.PI1 if factor == 0 else Regime.PI2
    suboptimal = solve_suboptimal_system(scenario, schedule, phi_tilde, regime=regime)
    return suboptimal, solve_complete_system(scenario)


def loss_from_values(
    scenario: ScenarioConfig,
    strategy: Strategy | str,
    suboptimal: ValueCoefficients,
    optimal: ValueCoefficients,
    tau: float,
    v1: float,
    v2: float,
) -> UtilityLossReport:
    """Wealth-equivalent loss 1 - exp((dH1 v1 + dH2 v2 + dh) / (1 - gamma))."""
    dH = tuple(float(suboptimal.H(j, tau)) - float(optimal.H(j, tau)) for j in range(2))
    dh = float(suboptimal.h(tau)) - float(optimal.h(tau))
    exponent = (dH[0] * v1 + dH[1] * v2 + dh) / (1.0 - scenario.gamma)
    loss = -math.expm1(exponent)
    return UtilityLossReport(Strategy(strategy), loss, tau, v1, v2, dH, dh)


def utility_loss(
    scenario: ScenarioConfig,
    strategy: Strategy | str,
    *,
    t: float = 0.0,
    state: tuple[float, float] | None = None,
    evaluation: Evaluation | str = Evaluation.ADVERSARIAL,
) -> UtilityLossReport:
    """
    Wealth-equivalent utility loss of a suboptimal strategy.

    Args:
        scenario: Scenario
        strategy: pi1 / pi2 (ignore one factor's ambiguity), pi3 (no derivatives)
                  or jump-ignore
        t: Evaluation time
        state: (v1, v2); defaults to the scenario's initial variances
        evaluation: Scoring convention for pi1 / pi2

    Returns:
        UtilityLossReport
    """
    v1, v2 = state if state is not None else scenario.initial_variances
    suboptimal, optimal = strategy_values(scenario, strategy, evaluation)
    report = loss_from_values(
        scenario, strategy, suboptimal, optimal, scenario.horizon - t, v1, v2
    )
    logger.info(f"Utility loss of {report.strategy}: {report.loss:.6g}")
    return report


def jump_ignore_loss(
    scenario: ScenarioConfig, *, state: tuple[float, float] | None = None
) -> UtilityLossReport:
    """Loss from holding no jump exposure; zero exactly when nu_P = nu_Q."""
    if not scenario.has_jumps:
        raise ConfigurationError("jump-ignore loss needs a scenario with jumps")
    return utility_loss(scenario, Strategy.JUMP_IGNORE, state=state)


def positivity_audit(
    scenario: ScenarioConfig,
    strategy: Strategy | str,
    *,
    points: int = 1000,
    tolerance: float = 1e-10,
    evaluation: Evaluation | str = Evaluation.ADVERSARIAL,
) -> PositivityAudit:
    """
    Check H^Pi_j(tau) >= H_j(tau) on a uniform grid over [0, T].

    Returns:
        PositivityAudit with the per-factor minimum gap over tau > 0 and the grid
    """
    suboptimal, optimal = strategy_values(scenario, strategy, evaluation)
    taus = np.linspace(0.0, scenario.horizon, points)
    gaps = np.column_stack(
        [np.asarray(suboptimal.H(j, taus)) - np.asarray(optimal.H(j, taus)) for j in range(2)]
    )
    min_gap = tuple(float(gaps[1:, j].min()) for j in range(2))
    passed = bool(np.all(gaps >= -tolerance))
    if not passed:
        logger.warning(f"Positivity audit failed for {strategy}: min gaps {min_gap}")
    witness = pd.DataFrame({"tau": taus, "gap1": gaps[:, 0], "gap2": gaps[:, 1]})
    return PositivityAudit(passed=passed, min_gap=min_gap, witness=witness)


def loss_grid(
    scenario: ScenarioConfig,
    factor: int,
    phi_s_values,
    phi_v_values,
    strategy: Strategy | str,
    *,
    evaluation: Evaluation | str = Evaluation.ADVERSARIAL,
) -> pd.DataFrame:
    """Utility loss over a grid of one factor's (phi^S, phi^V)."""
    rows = []
    for phi_s in phi_s_values:
        for phi_v in phi_v_values:
            cell = scenario.with_phi(factor, phi_s=float(phi_s), phi_v=float(phi_v))
            report = utility_loss(cell, strategy, evaluation=evaluation)
            rows.append({"phi_s": float(phi_s), "phi_v": float(phi_v), **report.as_row()})
    return pd.DataFrame(rows, columns=["phi_s", "phi_v", *LOSS_COLUMNS])
