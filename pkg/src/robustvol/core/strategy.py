"""Optimal exposures, worst-case measures and portfolio weights.

Exposures are the primary representation: beta^S_j and beta^V_j are the
wealth loadings on the stock and volatility Brownian motions of factor j,
independent of which instruments implement them. Portfolio weights are a
derived view obtained from option greeks.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.linalg import lu_factor, lu_solve

from robustvol.core.model import ScenarioConfig
from robustvol.core.riccati import (
    ReductionMode,
    ValueCoefficients,
    closed_form_H,
    derive_complete_coeffs,
    derive_jump_coeffs,
    incomplete_weight,
    solve_incomplete_system,
)
from robustvol.errors import (
    ConfigurationError,
    DomainError,
    MarketIncompletenessError,
    UnsupportedConfigurationError,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
GREEKS_COLUMNS = ["option", "price", "delta", "vega1", "vega2"]


@dataclass(frozen=True)
class Exposures:
    beta_s: tuple[float, float]
    beta_v: tuple[float, float]
    beta_n: float | None = None

    def as_vector(self) -> NDArray[np.float64]:
        values = [*self.beta_s, *self.beta_v]
        if self.beta_n is not None:
            values.append(self.beta_n)
        return np.array(values)


@dataclass(frozen=True)
class WorstCase:
    e_s: tuple[float, float]
    e_v: tuple[float, float]
    state: tuple[float, float]


@dataclass(frozen=True)
class OptionGreeks:
    """Prices and sensitivities of the hedging options, one entry per option."""

    names: tuple[str, ...]
    price: NDArray[np.float64]
    delta: NDArray[np.float64]
    vega1: NDArray[np.float64]
    vega2: NDArray[np.float64]
    jump_delta: NDArray[np.float64] | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.price) <= 0):
            raise ConfigurationError("option prices must be strictly positive")

    @property
    def count(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class PortfolioWeights:
    pi_s: float
    pi_o: tuple[float, ...]
    cash: float


@dataclass(frozen=True)
class ValueDerivatives:
    """Partial derivatives of an exponential-affine J at one state."""

    x: float
    J: float
    J_t: float
    J_x: float
    J_xx: float
    J_v: tuple[float, float]
    J_vv: tuple[float, float]
    J_xv: tuple[float, float]


def _check_state(v1: float, v2: float):
    if v1 < 0 or v2 < 0:
        raise DomainError(f"variances must be >= 0, got v1={v1}, v2={v2}")


def exposures_from_H(scenario: ScenarioConfig, H: tuple[float, float]) -> Exposures:
    """Optimal exposures given the value-function coefficients H_j."""
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    beta_s, beta_v = [], []
    for j, f in enumerate(scenario.factors):
        phi_s, phi_v = scenario.prefs.phi_s[j], scenario.prefs.phi_v[j]
        a_s, a_v = gamma + phi_s, gamma + phi_v
        beta_s.append(
            f.lambda_risk / a_s + (one_g - phi_s) * f.sigma_v * f.rho * H[j] / (one_g * a_s)
        )
        beta_v.append(
            f.mu_risk / a_v + (one_g - phi_v) * f.sigma_v * f.rho_bar * H[j] / (one_g * a_v)
        )
    return Exposures(beta_s=tuple(beta_s), beta_v=tuple(beta_v))


def worst_case_from_H(
    scenario: ScenarioConfig, H: tuple[float, float], v1: float, v2: float
) -> WorstCase:
    """Worst-case drift distortions of the optimal investor given H_j."""
    _check_state(v1, v2)
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    e_s, e_v = [], []
    for j, (f, v) in enumerate(zip(scenario.factors, (v1, v2), strict=True)):
        phi_s, phi_v = scenario.prefs.phi_s[j], scenario.prefs.phi_v[j]
        a_s, a_v = gamma + phi_s, gamma + phi_v
        root = math.sqrt(v)
        e_s.append(
            phi_s * (f.lambda_risk / a_s + f.sigma_v * f.rho * H[j] / (one_g * a_s)) * root
        )
        e_v.append(
            phi_v * (f.mu_risk / a_v + f.sigma_v * f.rho_bar * H[j] / (one_g * a_v)) * root
        )
    return WorstCase(e_s=tuple(e_s), e_v=tuple(e_v), state=(v1, v2))


def _complete_H(scenario: ScenarioConfig, tau: float) -> tuple[float, float]:
    coeffs = derive_complete_coeffs(scenario)
    return closed_form_H(coeffs[0], tau), closed_form_H(coeffs[1], tau)


def optimal_exposures_complete(scenario: ScenarioConfig, tau: float) -> Exposures:
    """
    Optimal exposures of the complete-market robust investor.

    Args:
        scenario: Scenario without jumps or correlation
        tau: Time to go, in years

    Returns:
        Exposures (beta_n is None)

    Examples:
        With lambda_1 = 3, gamma = 4 and phi^S_1 = 1, beta^S_1(0) = 3 / 5 = 0.6.
    """
    return exposures_from_H(scenario, _complete_H(scenario, tau))


def worst_case_complete(scenario: ScenarioConfig, tau: float, v1: float, v2: float) -> WorstCase:
    """
    Worst-case drift distortions e^S_j, e^V_j of the complete-market investor.

    Raises:
        DomainError: If a variance is negative
    """
    _check_state(v1, v2)
    return worst_case_from_H(scenario, _complete_H(scenario, tau), v1, v2)


def novikov_profile(scenario: ScenarioConfig, taus) -> NDArray[np.float64]:
    """
    K_j(tau): squared worst-case loading per unit variance along the horizon.

    Returns an array of shape (len(taus), 2); sup_tau K_j(tau) * sigma_j^2 <= kappa_j^2
    is the admissibility bound.
    """
    rows = []
    for tau in np.atleast_1d(taus):
        wc = worst_case_from_H(scenario, _complete_H(scenario, float(tau)), 1.0, 1.0)
        rows.append([wc.e_s[j] ** 2 + wc.e_v[j] ** 2 for j in range(2)])
    return np.array(rows)


def general_pi_s_pointwise(
    scenario: ScenarioConfig, Hbar: tuple[float, float], v1: float, v2: float
) -> float:
    """
    State-dependent stock weight of the two-factor incomplete market.

    The weight is the variance-weighted first-order condition over both
    factors. It is evaluated pointwise only; with two distinct factors it does
    not keep the value function exponential-affine.

    Raises:
        DomainError: If v1 + v2 == 0 or a variance is negative
    """
    _check_state(v1, v2)
    if v1 + v2 == 0:
        raise DomainError("general stock weight undefined at v1 + v2 = 0")
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    numerator = 0.0
    denominator = 0.0
    for j, (f, v) in enumerate(zip(scenario.factors, (v1, v2), strict=True)):
        phi_s = scenario.prefs.phi_s[j]
        hedge = f.rho * f.sigma_v * Hbar[j]
        numerator += one_g * v * (f.lambda_risk + hedge) - phi_s * v * hedge
        denominator += one_g * v * (gamma + phi_s)
    return numerator / denominator


def optimal_stock_weight_incomplete(
    scenario: ScenarioConfig,
    tau: float,
    reduction: ReductionMode | str | None = None,
) -> float:
    """
    Optimal stock weight without derivative trading.

    Raises:
        UnsupportedConfigurationError: For distinct factors without a
            single-factor reduction; use general_pi_s_pointwise instead.
    """
    values = _tradable_incomplete(scenario, reduction)
    j = values.reduction.active_factors[0]
    return float(
        incomplete_weight(
            scenario.factors[j], scenario.gamma, scenario.prefs.phi_s[j], values.H(j, tau)
        )
    )


def _tradable_incomplete(
    scenario: ScenarioConfig, reduction: ReductionMode | str | None
) -> ValueCoefficients:
    values = solve_incomplete_system(
        scenario, ReductionMode(reduction) if reduction is not None else None
    )
    _require_tradable(values)
    return values


def _require_tradable(values: ValueCoefficients):
    if values.reduction is ReductionMode.PER_FACTOR:
        raise UnsupportedConfigurationError(
            "per-factor H-bar values give no single stock weight; "
            "choose a single-factor reduction or use general_pi_s_pointwise"
        )


def incomplete_exposures(scenario: ScenarioConfig, values: ValueCoefficients, tau: float):
    """
    Stock exposures of the incomplete-market investor (no volatility exposure).

    Raises:
        UnsupportedConfigurationError: If ``values`` come from the per-factor mode
    """
    _require_tradable(values)
    beta_s = tuple(
        float(
            incomplete_weight(
                f, scenario.gamma, scenario.prefs.phi_s[j], values.H(j, tau)
            )
        )
        if j in values.reduction.active_factors
        else 0.0
        for j, f in enumerate(scenario.factors)
    )
    return Exposures(beta_s=beta_s, beta_v=(0.0, 0.0))


def worst_case_incomplete(
    scenario: ScenarioConfig,
    tau: float,
    v1: float,
    v2: float,
    reduction: ReductionMode | str | None = None,
) -> WorstCase:
    """Worst-case distortions when only the stock and cash are traded."""
    _check_state(v1, v2)
    values = _tradable_incomplete(scenario, reduction)
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    e_s, e_v = [], []
    for j, (f, v) in enumerate(zip(scenario.factors, (v1, v2), strict=True)):
        if j not in values.reduction.active_factors:
            e_s.append(0.0)
            e_v.append(0.0)
            continue
        phi_s, phi_v = scenario.prefs.phi_s[j], scenario.prefs.phi_v[j]
        Hb = float(values.H(j, tau))
        a_s = gamma + phi_s
        root = math.sqrt(v)
        e_s.append(phi_s * (f.lambda_risk / a_s + f.sigma_v * f.rho * Hb / (one_g * a_s)) * root)
        e_v.append(phi_v * f.sigma_v * f.rho_bar * Hb * root / one_g)
    return WorstCase(e_s=tuple(e_s), e_v=tuple(e_v), state=(v1, v2))


def jump_exposures(scenario: ScenarioConfig, tau: float) -> Exposures:
    """
    Optimal exposures with jump risk, including beta^N = ((nu_P/nu_Q)^(1/gamma) - 1) / j^S.

    Raises:
        ConfigurationError: If jumps are disabled or the jump size is zero
    """
    if scenario.jumps is None:
        raise ConfigurationError("jumps are disabled in this scenario")
    jumps = scenario.jumps
    if jumps.jump_size == 0:
        raise ConfigurationError("jump size j_s must be non-zero")
    coeffs = derive_jump_coeffs(scenario)
    H = (closed_form_H(coeffs[0], tau), closed_form_H(coeffs[1], tau))
    base = exposures_from_H(scenario, H)
    beta_n = ((jumps.nu_p / jumps.nu_q) ** (1.0 / scenario.gamma) - 1.0) / jumps.jump_size
    return Exposures(beta_s=base.beta_s, beta_v=base.beta_v, beta_n=beta_n)


def jump_worst_case(scenario: ScenarioConfig, tau: float, v1: float, v2: float) -> WorstCase:
    """Worst-case diffusion distortions with jump risk (C_j in place of H_j)."""
    coeffs = derive_jump_coeffs(scenario)
    H = (closed_form_H(coeffs[0], tau), closed_form_H(coeffs[1], tau))
    return worst_case_from_H(scenario, H, v1, v2)


def load_greeks(path: str | Path) -> OptionGreeks:
    """
    Read option greeks from CSV with header option,price,delta,vega1,vega2[,jump_delta].
    """
    df = pd.read_csv(path, comment="#")
    missing = [c for c in GREEKS_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigurationError(f"greeks file {path} is missing columns: {missing}")
    jump = df["jump_delta"].to_numpy(dtype=float) if "jump_delta" in df.columns else None
    return OptionGreeks(
        names=tuple(str(n) for n in df["option"]),
        price=df["price"].to_numpy(dtype=float),
        delta=df["delta"].to_numpy(dtype=float),
        vega1=df["vega1"].to_numpy(dtype=float),
        vega2=df["vega2"].to_numpy(dtype=float),
        jump_delta=jump,
    )


def exposure_matrix(greeks: OptionGreeks, scenario: ScenarioConfig) -> NDArray[np.float64]:
    """
    Loading matrix A mapping (pi^S, pi^1, ..., pi^n) to exposures.

    Rows are beta^S_1, beta^S_2, beta^V_1, beta^V_2 and, with jumps, beta^N.
    """
    jumps = scenario.has_jumps
    expected = 4 if jumps else 3
    if greeks.count != expected:
        raise ConfigurationError(
            f"{'jump' if jumps else 'complete'} market needs {expected} options, "
            f"got {greeks.count}"
        )
    f1, f2 = scenario.factors
    price = greeks.price
    vegas = (greeks.vega1, greeks.vega2)
    rows = []
    for f, vega in zip((f1, f2), vegas, strict=True):
        rows.append([1.0, *((greeks.delta + f.sigma_v * f.rho * vega) / price)])
    for f, vega in zip((f1, f2), vegas, strict=True):
        rows.append([0.0, *(f.sigma_v * f.rho_bar * vega / price)])
    if jumps:
        if greeks.jump_delta is None:
            raise ConfigurationError("jump regime needs a jump_delta column in the greeks")
        j_s = scenario.jumps.jump_size
        if j_s == 0:
            raise ConfigurationError("jump size j_s must be non-zero")
        rows.append([1.0, *(greeks.jump_delta / (j_s * price))])
    return np.array(rows)


def exposures_to_weights(
    exposures: Exposures, greeks: OptionGreeks, scenario: ScenarioConfig
) -> PortfolioWeights:
    """
    Solve A pi = beta for the stock and option weights.

    Raises:
        MarketIncompletenessError: If cond(A) > 1e12
        ConfigurationError: If the number of options does not match the regime
    """
    A = exposure_matrix(greeks, scenario)
    beta = exposures.as_vector()
    if len(beta) != A.shape[0]:
        raise ConfigurationError(
            f"exposure vector has {len(beta)} entries, loading matrix has {A.shape[0]} rows"
        )
    condition = np.linalg.cond(A)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise MarketIncompletenessError(
            f"option loading matrix is effectively singular (condition number {condition:.3e})"
        )
    logger.debug(f"Loading matrix condition number {condition:.3e}")
    pi = lu_solve(lu_factor(A), beta)
    return PortfolioWeights(
        pi_s=float(pi[0]), pi_o=tuple(float(p) for p in pi[1:]), cash=float(1.0 - pi.sum())
    )


def _tau_derivative(fn, tau: float, horizon: float, delta: float = 1e-3) -> float:
    """Five-point difference in tau, one-sided near the ends of [0, horizon]."""
    if 2 * delta <= tau <= horizon - 2 * delta:
        return (fn(tau - 2 * delta) - 8 * fn(tau - delta) + 8 * fn(tau + delta) - fn(
            tau + 2 * delta
        )) / (12 * delta)
    sign = 1.0 if tau < 2 * delta else -1.0
    f = [fn(tau + sign * k * delta) for k in range(5)]
    return sign * (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * delta)


def value_derivatives(
    scenario: ScenarioConfig,
    values: ValueCoefficients,
    t: float,
    x: float,
    v1: float,
    v2: float,
) -> ValueDerivatives:
    """Partial derivatives of J = x^(1-g)/(1-g) exp(H1 v1 + H2 v2 + h) at (t, x, v1, v2)."""
    if x <= 0:
        raise DomainError(f"wealth must be > 0, got {x}")
    gamma = scenario.gamma
    one_g = 1.0 - gamma
    tau = scenario.horizon - t
    H = (float(values.H(0, tau)), float(values.H(1, tau)))
    J = x**one_g / one_g * math.exp(H[0] * v1 + H[1] * v2 + float(values.h(tau)))
    d_exponent = _tau_derivative(
        lambda s: float(values.exponent(s, v1, v2)), tau, values.horizon
    )
    return ValueDerivatives(
        x=x,
        J=J,
        J_t=-d_exponent * J,
        J_x=one_g * J / x,
        J_xx=-gamma * one_g * J / x**2,
        J_v=(H[0] * J, H[1] * J),
        J_vv=(H[0] ** 2 * J, H[1] ** 2 * J),
        J_xv=(one_g * H[0] * J / x, one_g * H[1] * J / x),
    )


def general_suboptimal_worst_case(
    scenario: ScenarioConfig,
    derivs: ValueDerivatives,
    exposures: Exposures,
    v1: float,
    v2: float,
    phi_tilde: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> WorstCase:
    """
    Worst-case distortions for arbitrary exposures and value-function derivatives:
    e^S_j = Psi^S_j (x beta^S_j J_x + rho_j sigma_j J_vj) sqrt(v_j), with
    Psi = phi / ((1 - gamma) J).
    """
    _check_state(v1, v2)
    if phi_tilde is None:
        phi_tilde = (scenario.prefs.phi_s, scenario.prefs.phi_v)
    one_g = 1.0 - scenario.gamma
    e_s, e_v = [], []
    for j, (f, v) in enumerate(zip(scenario.factors, (v1, v2), strict=True)):
        psi_s = phi_tilde[0][j] / (one_g * derivs.J)
        psi_v = phi_tilde[1][j] / (one_g * derivs.J)
        root = math.sqrt(v)
        wealth = derivs.x * derivs.J_x
        e_s.append(
            psi_s * (wealth * exposures.beta_s[j] + f.rho * f.sigma_v * derivs.J_v[j]) * root
        )
        e_v.append(
            psi_v * (wealth * exposures.beta_v[j] + f.rho_bar * f.sigma_v * derivs.J_v[j]) * root
        )
    return WorstCase(e_s=tuple(e_s), e_v=tuple(e_v), state=(v1, v2))


def hjb_terms(
    scenario: ScenarioConfig,
    derivs: ValueDerivatives,
    exposures: Exposures,
    worst_case: WorstCase,
    phi_tilde: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> NDArray[np.float64]:
    """
    Individual terms of the robust HJB operator at one state for given controls.

    Their sum is the objective that the investor maximizes over exposures and
    nature minimizes over distortions; it vanishes at the saddle point.
    """
    if phi_tilde is None:
        phi_tilde = (scenario.prefs.phi_s, scenario.prefs.phi_v)
    one_g = 1.0 - scenario.gamma
    x, J = derivs.x, derivs.J
    r = scenario.market.r
    terms = [derivs.J_t, derivs.J_x * x * r]
    state = worst_case.state
    for j, f in enumerate(scenario.factors):
        v = state[j]
        root = math.sqrt(v)
        bs, bv = exposures.beta_s[j], exposures.beta_v[j]
        es, ev = worst_case.e_s[j], worst_case.e_v[j]
        sig, rho, rho_bar = f.sigma_v, f.rho, f.rho_bar
        terms += [
            derivs.J_x * x * (bs * root * (f.lambda_risk * root - es)),
            derivs.J_x * x * (bv * root * (f.mu_risk * root - ev)),
            0.5 * derivs.J_xx * x**2 * (bs**2 + bv**2) * v,
            derivs.J_v[j] * (f.kappa * (f.theta - v) - sig * root * (rho * es + rho_bar * ev)),
            0.5 * sig**2 * v * derivs.J_vv[j],
            x * derivs.J_xv[j] * sig * v * (rho * bs + rho_bar * bv),
        ]
        for e, phi in ((es, phi_tilde[0][j]), (ev, phi_tilde[1][j])):
            if phi == 0:
                terms.append(0.0 if e == 0 else math.inf)
            else:
                terms.append(e**2 * one_g * J / (2.0 * phi))
    if scenario.jumps is not None:
        jumps = scenario.jumps
        beta_n = exposures.beta_n or 0.0
        wealth_jump = 1.0 + beta_n * jumps.jump_size
        intensity = state[0] + state[1]
        terms += [
            intensity * jumps.nu_p * (wealth_jump**one_g - 1.0) * J,
            -intensity * x * derivs.J_x * beta_n * jumps.jump_size * jumps.nu_q,
        ]
    return np.array(terms)


def hjb_objective(scenario, derivs, exposures, worst_case, phi_tilde=None) -> float:
    """Sum of hjb_terms."""
    return float(np.sum(hjb_terms(scenario, derivs, exposures, worst_case, phi_tilde)))


def hjb_residual(scenario, derivs, exposures, worst_case, phi_tilde=None) -> float:
    """Relative HJB residual |sum of terms| / sum of |terms|."""
    terms = hjb_terms(scenario, derivs, exposures, worst_case, phi_tilde)
    return float(abs(terms.sum()) / np.abs(terms).sum())
