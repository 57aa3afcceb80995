"""Riccati coefficients and value-function coefficient solvers.

The indirect utility of every regime has the exponential-affine form

    J(t, x, v1, v2) = x^(1-gamma) / (1-gamma) * exp(H1(tau) v1 + H2(tau) v2 + h(tau))

with tau = T - t. The H_j solve scalar Riccati equations H' = a H + b H^2 + c
and h' = kappa1 theta1 H1 + kappa2 theta2 H2 + (1-gamma) r, all with zero
initial condition.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import cumulative_simpson, quad

from robustvol.config import ODE_STEP
from robustvol.core.model import FactorParams, ScenarioConfig
from robustvol.core.ode import OdeSolution, integrate, uniform_grid
from robustvol.errors import (
    ConfigurationError,
    ExplosiveSolutionError,
    RiccatiPoleError,
    UnsupportedConfigurationError,
)

if TYPE_CHECKING:
    from robustvol.core.strategy import Exposures

logger = logging.getLogger(__name__)

POLE_TOLERANCE = 1e-14


class Regime(StrEnum):
    COMPLETE = "complete"
    INCOMPLETE = "incomplete"
    JUMP = "jump"
    PI1 = "suboptimal-pi1"
    PI2 = "suboptimal-pi2"
    JUMP_IGNORE = "jump-ignore"
    SUBOPTIMAL = "suboptimal"


class ReductionMode(StrEnum):
    """
    How the incomplete-market system is reduced to something affine.

    SINGLE_FACTOR_j keeps only factor j's volatility risk; IDENTICAL needs
    equal factor blocks and ambiguity parameters. PER_FACTOR integrates each
    factor's H-bar as if it were the only one. It yields no tradable single
    stock weight and only serves as the H-bar input of the pi3 comparison.
    """

    PER_FACTOR = "per-factor"
    SINGLE_FACTOR_1 = "single-factor-1"
    SINGLE_FACTOR_2 = "single-factor-2"
    IDENTICAL = "identical"

    @property
    def active_factors(self) -> tuple[int, ...]:
        if self is ReductionMode.SINGLE_FACTOR_1:
            return (0,)
        if self is ReductionMode.SINGLE_FACTOR_2:
            return (1,)
        return (0, 1)


@dataclass(frozen=True)
class RiccatiCoeffs:
    """Coefficients of H' = a H + b H^2 + c; ``d`` is sqrt(a^2 - 4bc) or NaN."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def from_abc(cls, a: float, b: float, c: float) -> "RiccatiCoeffs":
        disc = a * a - 4.0 * b * c
        return cls(a, b, c, math.sqrt(disc) if disc >= 0 else float("nan"))

    @property
    def discriminant(self) -> float:
        return self.a * self.a - 4.0 * self.b * self.c

    def rhs(self, H):
        return self.a * H + self.b * H * H + self.c


@dataclass(frozen=True)
class ValueCoefficients:
    """
    The functions H1, H2 and h of the exponential-affine indirect utility.

    ``solution`` holds columns (H1, H2, h) on a uniform tau grid over [0, T].
    When ``coeffs`` is set the H_j are evaluated in closed form instead of
    from the grid.
    """

    regime: Regime
    solution: OdeSolution
    coeffs: tuple[RiccatiCoeffs, RiccatiCoeffs] | None = None
    reduction: ReductionMode | None = None

    def H(self, j: int, tau):
        if self.coeffs is not None:
            return closed_form_H(self.coeffs[j], tau)
        return self.solution(tau, j)

    def h(self, tau):
        return self.solution(tau, 2)

    def exponent(self, tau, v1, v2):
        return self.H(0, tau) * v1 + self.H(1, tau) * v2 + self.h(tau)

    @property
    def horizon(self) -> float:
        return float(self.solution.tau[-1])


def _require_plain(scenario: ScenarioConfig, *, allow_jumps: bool = False):
    if scenario.is_correlated:
        raise UnsupportedConfigurationError(
            "correlated factors use the affine system in robustvol.core.correlated"
        )
    if scenario.has_jumps and not allow_jumps:
        raise UnsupportedConfigurationError(
            "scenario has jumps; use derive_jump_coeffs or drop the jumps section"
        )


def _complete_abc(
    factor: FactorParams, gamma: float, phi_s: float, phi_v: float, *, with_vol_exposure=True
) -> tuple[float, float, float]:
    a_s = gamma + phi_s
    a_v = gamma + phi_v
    one_g = 1.0 - gamma
    sig, rho, rho_bar = factor.sigma_v, factor.rho, factor.rho_bar
    a = -factor.kappa + factor.lambda_risk * sig * rho * (one_g - phi_s) / a_s
    b = (
        0.5 * sig**2
        - phi_s * rho**2 * sig**2 / (2.0 * one_g)
        - phi_v * rho_bar**2 * sig**2 / (2.0 * one_g)
        + rho**2 * sig**2 * (one_g - phi_s) ** 2 / (2.0 * one_g * a_s)
    )
    c = one_g * factor.lambda_risk**2 / (2.0 * a_s)
    if with_vol_exposure:
        a += factor.mu_risk * sig * rho_bar * (one_g - phi_v) / a_v
        b += rho_bar**2 * sig**2 * (one_g - phi_v) ** 2 / (2.0 * one_g * a_v)
        c += one_g * factor.mu_risk**2 / (2.0 * a_v)
    return a, b, c


def _checked(a: float, b: float, c: float, j: int) -> RiccatiCoeffs:
    coeffs = RiccatiCoeffs.from_abc(a, b, c)
    if coeffs.discriminant < 0:
        raise ExplosiveSolutionError(
            f"factor{j + 1}: a^2 - 4bc = {coeffs.discriminant:.6g} < 0, "
            "H blows up in finite time"
        )
    return coeffs


def derive_complete_coeffs(scenario: ScenarioConfig) -> tuple[RiccatiCoeffs, RiccatiCoeffs]:
    """
    Riccati coefficients of the complete-market robust investor.

    Raises:
        ExplosiveSolutionError: If a^2 - 4bc < 0 for either factor
        UnsupportedConfigurationError: If the scenario has jumps or correlated factors
    """
    _require_plain(scenario)
    prefs = scenario.prefs
    return tuple(
        _checked(*_complete_abc(f, prefs.gamma, prefs.phi_s[j], prefs.phi_v[j]), j)
        for j, f in enumerate(scenario.factors)
    )


def jump_increment(scenario: ScenarioConfig) -> float:
    """Minimum over the jump exposure of the jump contribution to each c_j."""
    if scenario.jumps is None:
        raise ConfigurationError("jumps are disabled in this scenario")
    gamma = scenario.gamma
    nu_p, nu_q = scenario.jumps.nu_p, scenario.jumps.nu_q
    if nu_q <= 0:
        raise ConfigurationError(f"nu_q must be > 0, got {nu_q}")
    ratio = (nu_p / nu_q) ** (1.0 / gamma)
    return ratio * gamma * nu_q - (gamma - 1.0) * nu_q - nu_p


def derive_jump_coeffs(scenario: ScenarioConfig) -> tuple[RiccatiCoeffs, RiccatiCoeffs]:
    """
    Riccati coefficients with jump risk; a and b match the no-jump case and
    the forcing term is s_j = c_j + jump_increment.
    """
    increment = jump_increment(scenario)
    base = derive_complete_coeffs(scenario.without_jumps())
    return tuple(_checked(k.a, k.b, k.c + increment, j) for j, k in enumerate(base))


def derive_incomplete_coeffs(scenario: ScenarioConfig) -> tuple[RiccatiCoeffs, RiccatiCoeffs]:
    """
    Riccati form of the per-factor incomplete-market system.

    Substituting the optimal stock weight back into the H-bar equations
    leaves a Riccati equation without the volatility-exposure terms; the
    volatility-ambiguity penalty stays in b.
    """
    _require_plain(scenario)
    prefs = scenario.prefs
    return tuple(
        _checked(
            *_complete_abc(
                f, prefs.gamma, prefs.phi_s[j], prefs.phi_v[j], with_vol_exposure=False
            ),
            j,
        )
        for j, f in enumerate(scenario.factors)
    )


def closed_form_H(coeffs: RiccatiCoeffs, tau):
    """
    Closed-form solution of H' = a H + b H^2 + c with H(0) = 0.

    H(tau) = 2c (1 - e^{-d tau}) / (2d + (a + d)(e^{-d tau} - 1))

    Raises:
        RiccatiPoleError: If the denominator magnitude drops below 1e-14
    """
    a, c, d = coeffs.a, coeffs.c, coeffs.d
    if math.isnan(d):
        raise ExplosiveSolutionError("closed form requires a^2 - 4bc >= 0")
    tau_arr = np.asarray(tau, dtype=float)
    if c == 0.0:
        result = np.zeros_like(tau_arr)
    elif d <= 1e-10 * (abs(a) + 1.0):
        # double root: limit d -> 0
        den = 2.0 - a * tau_arr
        if np.any(np.abs(den) < POLE_TOLERANCE):
            raise RiccatiPoleError(f"Riccati pole at tau={tau} (a={a}, d=0)")
        result = 2.0 * c * tau_arr / den
    else:
        one_minus_e = -np.expm1(-d * tau_arr)
        den = 2.0 * d - (a + d) * one_minus_e
        if np.any(np.abs(den) < POLE_TOLERANCE):
            raise RiccatiPoleError(f"Riccati pole at tau={tau} (a={a}, d={d})")
        result = 2.0 * c * one_minus_e / den
    return float(result) if np.ndim(result) == 0 else result


def riccati_integral(coeffs: RiccatiCoeffs, tau: float) -> float:
    """Integral of the closed-form H over [0, tau]."""
    a, b, d = coeffs.a, coeffs.b, coeffs.d
    if tau == 0.0 or coeffs.c == 0.0:
        return 0.0
    if abs(b) < 1e-12 or d <= 1e-10 * (abs(a) + 1.0):
        value, _ = quad(lambda s: closed_form_H(coeffs, s), 0.0, tau, epsabs=1e-13, epsrel=1e-12)
        return value
    e = math.exp(-d * tau)
    return -(a + d) * tau / (2.0 * b) - math.log(((a + d) * e - a + d) / (2.0 * d)) / b


def _h_rate(scenario: ScenarioConfig) -> tuple[float, float, float]:
    f1, f2 = scenario.factors
    return f1.kappa * f1.theta, f2.kappa * f2.theta, (1.0 - scenario.gamma) * scenario.market.r


def _regime_coeffs(scenario: ScenarioConfig) -> tuple[RiccatiCoeffs, RiccatiCoeffs]:
    return derive_jump_coeffs(scenario) if scenario.has_jumps else derive_complete_coeffs(scenario)


def closed_form_h(
    scenario: ScenarioConfig,
    tau: float,
    coeffs: tuple[RiccatiCoeffs, RiccatiCoeffs] | None = None,
) -> float:
    """
    h(tau) by adaptive quadrature of kappa1 theta1 H1 + kappa2 theta2 H2 + (1-gamma) r.

    Args:
        scenario: Scenario (jump coefficients are used when jumps are enabled)
        tau: Time to go, in years
        coeffs: Override for the per-factor Riccati coefficients

    Returns:
        h(tau)
    """
    if tau == 0.0:
        return 0.0
    coeffs = coeffs or _regime_coeffs(scenario)
    k1, k2, drift = _h_rate(scenario)

    def integrand(s):
        return k1 * closed_form_H(coeffs[0], s) + k2 * closed_form_H(coeffs[1], s)

    value, _ = quad(integrand, 0.0, tau, epsabs=1e-13, epsrel=1e-12, limit=200)
    return value + drift * tau


def closed_form_h_log(
    scenario: ScenarioConfig,
    coeffs: tuple[RiccatiCoeffs, RiccatiCoeffs],
    tau: float,
) -> float:
    """Integrated closed form of h; cross-check for closed_form_h."""
    k1, k2, drift = _h_rate(scenario)
    return k1 * riccati_integral(coeffs[0], tau) + k2 * riccati_integral(coeffs[1], tau) + (
        drift * tau
    )


def solve_riccati_numeric(
    coeffs: RiccatiCoeffs,
    tau_grid: NDArray,
    initial: float = 0.0,
    *,
    step: float = ODE_STEP,
) -> OdeSolution:
    """RK4 oracle for a constant-coefficient Riccati equation."""
    return integrate(lambda tau, y: coeffs.rhs(y), initial, tau_grid, step=step)


def _closed_form_values(
    scenario: ScenarioConfig, coeffs: tuple[RiccatiCoeffs, RiccatiCoeffs], regime: Regime
) -> ValueCoefficients:
    grid = uniform_grid(scenario.horizon)
    H1 = closed_form_H(coeffs[0], grid)
    H2 = closed_form_H(coeffs[1], grid)
    k1, k2, drift = _h_rate(scenario)
    h = cumulative_simpson(k1 * H1 + k2 * H2 + drift, x=grid, initial=0.0)
    solution = OdeSolution(tau=grid, values=np.column_stack([H1, H2, h]), step=ODE_STEP)
    return ValueCoefficients(regime=regime, solution=solution, coeffs=coeffs)


@lru_cache(maxsize=256)
def solve_complete_system(scenario: ScenarioConfig) -> ValueCoefficients:
    """Complete-market value coefficients (closed-form H, quadrature h)."""
    return _closed_form_values(scenario, derive_complete_coeffs(scenario), Regime.COMPLETE)


@lru_cache(maxsize=256)
def solve_jump_system(scenario: ScenarioConfig) -> ValueCoefficients:
    """Value coefficients C_j and c of the investor facing jump risk."""
    return _closed_form_values(scenario, derive_jump_coeffs(scenario), Regime.JUMP)


def incomplete_weight(factor: FactorParams, gamma: float, phi_s: float, Hbar):
    """Single-factor optimal stock weight as a function of H-bar."""
    a_s = gamma + phi_s
    return factor.lambda_risk / a_s + (1.0 - gamma - phi_s) * factor.sigma_v * factor.rho * Hbar / (
        (1.0 - gamma) * a_s
    )


def resolve_reduction(
    scenario: ScenarioConfig, reduction: ReductionMode | str | None
) -> ReductionMode:
    """
    Pick the incomplete-market reduction.

    Without an explicit choice, identical factor blocks use IDENTICAL.

    Raises:
        UnsupportedConfigurationError: If no reduction is given and the factors
            differ, or IDENTICAL is asked for distinct factors
    """
    identical = (
        scenario.factors[0] == scenario.factors[1]
        and scenario.prefs.phi_s[0] == scenario.prefs.phi_s[1]
        and scenario.prefs.phi_v[0] == scenario.prefs.phi_v[1]
    )
    if reduction is None:
        if not identical:
            raise UnsupportedConfigurationError(
                "two distinct factors break the affine incomplete-market solution; "
                "choose single-factor-1 or single-factor-2, or use general_pi_s_pointwise"
            )
        return ReductionMode.IDENTICAL
    reduction = ReductionMode(reduction)
    if reduction is ReductionMode.IDENTICAL and not identical:
        raise UnsupportedConfigurationError(
            "identical-factor reduction requires equal factor blocks and ambiguity parameters"
        )
    return reduction


@lru_cache(maxsize=256)
def solve_incomplete_system(
    scenario: ScenarioConfig, reduction: ReductionMode | str | None = None
) -> ValueCoefficients:
    """
    Integrate the incomplete-market H-bar system (stock and cash only).

    Args:
        scenario: Scenario without jumps or correlation
        reduction: Reduction mode; see resolve_reduction

    Returns:
        ValueCoefficients on a uniform grid, regime INCOMPLETE

    Raises:
        BlowUpError: If the integration explodes
        UnsupportedConfigurationError: If the factors differ and no reduction is given
    """
    _require_plain(scenario)
    mode = resolve_reduction(scenario, reduction)
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    prefs = scenario.prefs
    active = mode.active_factors
    k1, k2, drift = _h_rate(scenario)
    kappa_theta = (k1, k2)

    def rhs(tau, y):
        dy = np.zeros(3)
        for j in active:
            f = scenario.factors[j]
            phi_s, phi_v = prefs.phi_s[j], prefs.phi_v[j]
            Hb = y[j]
            pi = incomplete_weight(f, gamma, phi_s, Hb)
            sig, rho = f.sigma_v, f.rho
            dy[j] = (
                one_g * pi * f.lambda_risk
                - 0.5 * gamma * one_g * pi**2
                - f.kappa * Hb
                + 0.5 * sig**2 * Hb**2
                + one_g * sig * rho * Hb * pi
                - 0.5 * one_g * phi_s * (pi + rho * sig * Hb / one_g) ** 2
                - 0.5 * phi_v * f.rho_bar**2 * sig**2 * Hb**2 / one_g
            )
            dy[2] += kappa_theta[j] * Hb
        dy[2] += drift
        return dy

    solution = integrate(rhs, np.zeros(3), tau_end=scenario.horizon)
    logger.debug(
        f"Incomplete system ({mode}) integrated, error estimate {solution.error_estimate:.2e}"
    )
    return ValueCoefficients(regime=Regime.INCOMPLETE, solution=solution, reduction=mode)


def jump_objective(scenario: ScenarioConfig, beta_n: float) -> float:
    """Jump contribution to each c_j for a given jump exposure (zero without jumps)."""
    if scenario.jumps is None:
        return 0.0
    gamma = scenario.gamma
    j_s, nu_p, nu_q = scenario.jumps.jump_size, scenario.jumps.nu_p, scenario.jumps.nu_q
    wealth_jump = 1.0 + beta_n * j_s
    if wealth_jump <= 0:
        return float("inf")
    return nu_p * (wealth_jump ** (1.0 - gamma) - 1.0) - (1.0 - gamma) * beta_n * j_s * nu_q


def suboptimal_abc(
    scenario: ScenarioConfig,
    exposures: "Exposures",
    phi_tilde: tuple[tuple[float, float], tuple[float, float]],
) -> list[tuple[float, float, float]]:
    """
    Riccati coefficients (a_j, b_j, c_j) for fixed exposures evaluated under
    ambiguity parameters ``phi_tilde = ((phi_s1, phi_s2), (phi_v1, phi_v2))``.
    """
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    jump_term = jump_objective(scenario, exposures.beta_n or 0.0)
    result = []
    for j, f in enumerate(scenario.factors):
        ps, pv = phi_tilde[0][j], phi_tilde[1][j]
        bs, bv = exposures.beta_s[j], exposures.beta_v[j]
        sig, rho, rho_bar = f.sigma_v, f.rho, f.rho_bar
        a = -f.kappa + (one_g - ps) * sig * rho * bs + (one_g - pv) * sig * rho_bar * bv
        b = 0.5 * sig**2 - ps * rho**2 * sig**2 / (2 * one_g) - pv * rho_bar**2 * sig**2 / (
            2 * one_g
        )
        c = (
            one_g * (bs * f.lambda_risk + bv * f.mu_risk)
            - 0.5 * one_g * ((gamma + ps) * bs**2 + (gamma + pv) * bv**2)
            + jump_term
        )
        result.append((a, b, c))
    return result


def solve_suboptimal_system(
    scenario: ScenarioConfig,
    strategy_exposures: "Exposures | Callable[[float], Exposures]",
    phi_tilde: tuple[tuple[float, float], tuple[float, float]] | None = None,
    *,
    regime: Regime = Regime.SUBOPTIMAL,
) -> ValueCoefficients:
    """
    Value coefficients of an investor holding given exposures against a
    worst-case nature with ambiguity parameters ``phi_tilde``.

    Args:
        scenario: Scenario; its jump section (if any) adds the jump term
        strategy_exposures: Constant Exposures or a function of tau returning them
        phi_tilde: ((phi_s1, phi_s2), (phi_v1, phi_v2)); defaults to the scenario's
        regime: Tag recorded on the result

    Returns:
        ValueCoefficients on a uniform grid
    """
    if scenario.is_correlated:
        raise UnsupportedConfigurationError("suboptimal strategies need independent factors")
    if phi_tilde is None:
        phi_tilde = (scenario.prefs.phi_s, scenario.prefs.phi_v)
    schedule = strategy_exposures if callable(strategy_exposures) else None
    k1, k2, drift = _h_rate(scenario)

    def rhs(tau, y):
        exposures = schedule(tau) if schedule is not None else strategy_exposures
        (a1, b1, c1), (a2, b2, c2) = suboptimal_abc(scenario, exposures, phi_tilde)
        return np.array(
            [
                a1 * y[0] + b1 * y[0] ** 2 + c1,
                a2 * y[1] + b2 * y[1] ** 2 + c2,
                k1 * y[0] + k2 * y[1],
            ]
        ) + np.array([0.0, 0.0, drift])

    solution = integrate(rhs, np.zeros(3), tau_end=scenario.horizon)
    logger.debug(f"Suboptimal system {regime} integrated, error {solution.error_estimate:.2e}")
    return ValueCoefficients(regime=regime, solution=solution)


def value_coefficients(
    scenario: ScenarioConfig,
    regime: Regime | str = Regime.COMPLETE,
    reduction: ReductionMode | str | None = None,
) -> ValueCoefficients:
    """Value coefficients of the optimal investor in a regime (reduction: incomplete only)."""
    regime = Regime(regime)
    if regime is Regime.COMPLETE:
        return solve_complete_system(scenario.without_jumps())
    if regime is Regime.JUMP:
        return solve_jump_system(scenario)
    if regime is Regime.INCOMPLETE:
        return solve_incomplete_system(
            scenario, ReductionMode(reduction) if reduction is not None else None
        )
    raise ConfigurationError(f"regime {regime} has no optimal value function; use welfare")
