"""Correlated volatility factors via a moment-matched square-root approximation.

When the stock Brownian motions W1 and W2 are correlated, the wealth variance
picks up a term in sqrt(V1 V2) and the value function is no longer
exponential-affine in (V1, V2). Each sqrt(V_j) is replaced by a process U_j
with deterministic drift mu^U_j(t) and volatility psi^U_j(t) matching the
first two moments of sqrt(V_j(t)), and Y = U1 U2 is added as a state:

    J = x^(1-g)/(1-g) * exp(sum_j HV_j v_j + sum_j HU_j u_j + HY y + h_hat)

Controls and loadings are affine in (1, u1, u2). Products are reduced with
u_j^2 -> v_j and u1 u2 -> y, so every HJB term is a polynomial on the basis
[1, u1, u2, v1, v2, y] and matching coefficients yields the ODE system.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln, hyp1f1, logsumexp, rgamma

from robustvol.config import ODE_STEP
from robustvol.core.model import FactorParams, ScenarioConfig
from robustvol.core.ode import OdeSolution, integrate
from robustvol.core.strategy import Exposures, WorstCase, _tau_derivative
from robustvol.errors import (
    ConfigurationError,
    DomainError,
    ModelBreakdownError,
    SeriesConvergenceError,
    UnsupportedConfigurationError,
)

logger = logging.getLogger(__name__)

SERIES_TOLERANCE = 1e-12
SERIES_MAX_TERMS = 100_000
PSI_TOLERANCE = 1e-12
SMALL_T = 1e-6

# Polynomial basis; also the column order of AffineCoeffs.solution
BASIS = ("1", "u1", "u2", "v1", "v2", "y")
H_HAT, HU1, HU2, HV1, HV2, HY = range(6)


@dataclass(frozen=True)
class CirTransitionParams:
    """V(t) = c_t * noncentral chi-square(dof, noncentrality) given V(0)."""

    c_t: float
    dof: float
    noncentrality: float


@dataclass(frozen=True)
class DriftVolSchedule:
    """Drift and volatility of the moment-matched sqrt(V) process at time t."""

    t: float
    mu_u: float
    psi_u: float
    psi_sq: float
    tolerance: float = SERIES_TOLERANCE


@dataclass(frozen=True)
class AffineCoeffs:
    """HV_j, HU_j, HY and h_hat on a tau grid (columns ordered as BASIS)."""

    solution: OdeSolution
    horizon: float
    clamp_psi: bool = True

    def H_v(self, j: int, tau):
        return self.solution(tau, HV1 + j)

    def H_u(self, j: int, tau):
        return self.solution(tau, HU1 + j)

    def H_y(self, tau):
        return self.solution(tau, HY)

    def h_hat(self, tau):
        return self.solution(tau, H_HAT)

    def all_at(self, tau: float) -> NDArray[np.float64]:
        return np.array([float(self.solution(tau, k)) for k in range(6)])


@dataclass(frozen=True)
class ApproxControls:
    """
    Coefficient triples at one time, each row j reading (const, u_j, u_k).

    beta^S_j = a[j,1] + a[j,0] / u_j + a[j,2] u_k / u_j, likewise beta^V_j with b;
    e^S_j = g[j,0] + g[j,1] u_j + g[j,2] u_k, likewise e^V_j with k.
    """

    a: NDArray[np.float64]
    b: NDArray[np.float64]
    g: NDArray[np.float64]
    k: NDArray[np.float64]

    def exposures(self, u1: float, u2: float) -> Exposures:
        u = (u1, u2)
        beta_s, beta_v = [], []
        for j in range(2):
            own, other = u[j], u[1 - j]
            beta_s.append(self.a[j, 1] + self.a[j, 0] / own + self.a[j, 2] * other / own)
            beta_v.append(self.b[j, 1] + self.b[j, 0] / own + self.b[j, 2] * other / own)
        return Exposures(beta_s=tuple(beta_s), beta_v=tuple(beta_v))

    def worst_case(self, u1: float, u2: float) -> WorstCase:
        u = (u1, u2)
        e_s = tuple(self.g[j] @ (1.0, u[j], u[1 - j]) for j in range(2))
        e_v = tuple(self.k[j] @ (1.0, u[j], u[1 - j]) for j in range(2))
        return WorstCase(
            e_s=tuple(float(e) for e in e_s),
            e_v=tuple(float(e) for e in e_v),
            state=(u1 * u1, u2 * u2),
        )


def regularized_kummer(a, b, z):
    """Regularized confluent hypergeometric function M(a, b, z) / Gamma(b)."""
    return hyp1f1(a, b, z) * rgamma(b)


def cir_transition(factor: FactorParams, t: float) -> CirTransitionParams:
    """Scaled noncentral chi-square law of V(t) given V(0) = v0."""
    if t <= 0:
        raise DomainError(f"t must be > 0, got {t}")
    if factor.sigma_v == 0:
        raise DomainError("transition law is degenerate for sigma = 0")
    kappa, sig = factor.kappa, factor.sigma_v
    c_t = sig**2 * -math.expm1(-kappa * t) / (4.0 * kappa)
    dof = 4.0 * kappa * factor.theta / sig**2
    return CirTransitionParams(c_t, dof, factor.v0 * math.exp(-kappa * t) / c_t)


def cir_mean(factor: FactorParams, t):
    """E[V(t)] = theta + (v0 - theta) exp(-kappa t)."""
    return factor.theta + (factor.v0 - factor.theta) * np.exp(-factor.kappa * np.asarray(t))


def _sqrt_mean_series(params: CirTransitionParams) -> float:
    """E[sqrt(chi'^2)] / sqrt(2) as a Poisson mixture, summed around the mode in log space."""
    half_lam = 0.5 * params.noncentrality
    half_dof = 0.5 * params.dof
    if half_lam == 0.0:
        return math.exp(gammaln(half_dof + 0.5) - gammaln(half_dof))
    mode = math.floor(half_lam)
    width = 64
    while True:
        lo = max(0, mode - width)
        hi = mode + width
        if hi - lo + 1 > SERIES_MAX_TERMS:
            raise SeriesConvergenceError(
                f"sqrt-CIR mean series needs more than {SERIES_MAX_TERMS} terms "
                f"(noncentrality {params.noncentrality:.4g})"
            )
        k = np.arange(lo, hi + 1, dtype=float)
        log_terms = (
            -half_lam
            + k * math.log(half_lam)
            - gammaln(k + 1.0)
            + gammaln(half_dof + 0.5 + k)
            - gammaln(half_dof + k)
        )
        log_total = logsumexp(log_terms)
        upper_ok = log_terms[-1] - log_total < math.log(SERIES_TOLERANCE)
        lower_ok = lo == 0 or log_terms[0] - log_total < math.log(SERIES_TOLERANCE)
        if upper_ok and lower_ok:
            return math.exp(log_total)
        width *= 2


def cir_sqrt_moments(factor: FactorParams, t: float) -> tuple[float, float]:
    """
    Mean and variance of sqrt(V(t)) for a CIR factor started at v0.

    The mean is the noncentral chi-square series with Gamma ratios in log
    space, truncated when terms drop below 1e-12 of the total; the variance is
    E[V(t)] - mean^2.

    Raises:
        DomainError: If t <= 0
        SeriesConvergenceError: If the series needs more than 1e5 terms
    """
    if t <= 0:
        raise DomainError(f"t must be > 0, got {t}")
    mean_v = float(cir_mean(factor, t))
    if factor.sigma_v == 0:
        return math.sqrt(mean_v), 0.0
    params = cir_transition(factor, t)
    mean = math.sqrt(2.0 * params.c_t) * _sqrt_mean_series(params)
    return mean, max(mean_v - mean**2, 0.0)


def sqrt_mean_kummer(factor: FactorParams, t) -> NDArray[np.float64]:
    """E[sqrt(V(t))] through Kummer's function (vectorized in t > 0)."""
    t = np.asarray(t, dtype=float)
    if factor.sigma_v == 0:
        return np.sqrt(cir_mean(factor, t))
    kappa, sig = factor.kappa, factor.sigma_v
    c = sig**2 * -np.expm1(-kappa * t) / (4.0 * kappa)
    dof = 4.0 * kappa * factor.theta / sig**2
    lam = factor.v0 * np.exp(-kappa * t) / c
    log_ratio = gammaln(0.5 * (dof + 1.0)) - gammaln(0.5 * dof)
    return np.sqrt(2.0 * c) * np.exp(log_ratio) * hyp1f1(-0.5, 0.5 * dof, -0.5 * lam)


def _drift_vol_arrays(
    factor: FactorParams, t: NDArray, *, clamp: bool = False
) -> tuple[NDArray, NDArray, NDArray]:
    """mu^U, psi^U and the raw psi^2 at each t (small t uses the t -> 0 limits)."""
    t = np.asarray(t, dtype=float)
    kappa, theta, sig, v0 = factor.kappa, factor.theta, factor.sigma_v, factor.v0
    mean_v = cir_mean(factor, t)
    d_mean_v = -kappa * (v0 - theta) * np.exp(-kappa * t)
    small = t < SMALL_T
    ts = np.where(small, 1.0, t)

    if sig == 0:
        m = np.sqrt(mean_v)
        mu = d_mean_v / (2.0 * m)
        psi_sq = np.zeros_like(t)
    else:
        c = sig**2 * -np.expm1(-kappa * ts) / (4.0 * kappa)
        dc = sig**2 * np.exp(-kappa * ts) / 4.0
        dof = 4.0 * kappa * theta / sig**2
        lam = v0 * np.exp(-kappa * ts) / c
        dlam = -4.0 * kappa**2 * v0 * np.exp(kappa * ts) / (sig**2 * np.expm1(kappa * ts) ** 2)
        half_dof = 0.5 * dof
        # Gamma((d+1)/2) * regularized Kummer, kept in log space for large d
        first = np.exp(gammaln(half_dof + 0.5) - gammaln(half_dof)) * hyp1f1(
            -0.5, half_dof, -0.5 * lam
        )
        second = np.exp(gammaln(half_dof + 0.5) - gammaln(half_dof + 1.0)) * hyp1f1(
            0.5, half_dof + 1.0, -0.5 * lam
        )
        root = np.sqrt(2.0 * c)
        m = root * first
        mu = dc / root * first + root * (dlam / 4.0) * second
        psi_sq = d_mean_v - 2.0 * m * mu

    mu = np.where(small, (kappa * (theta - v0) - sig**2 / 4.0) / (2.0 * math.sqrt(v0)), mu)
    psi_sq = np.where(small, sig**2 / 4.0, psi_sq)
    if not clamp and np.any(psi_sq < -PSI_TOLERANCE):
        worst = float(psi_sq.min())
        raise ModelBreakdownError(f"psi^U squared is negative ({worst:.3e}); approximation fails")
    return mu, np.sqrt(np.maximum(psi_sq, 0.0)), psi_sq


def drift_vol_schedule(
    factor: FactorParams, t: float, *, clamp: bool = False
) -> DriftVolSchedule:
    """
    mu^U(t) = d/dt E[sqrt(V(t))] and psi^U(t) = sqrt(d/dt Var[sqrt(V(t))]).

    With clamp=True a negative psi^2 is floored at zero; psi_sq keeps the raw value.

    Raises:
        DomainError: If t <= 0 or v0 == 0
        ModelBreakdownError: If psi^2 < -1e-12 and clamp is off
    """
    if t <= 0:
        raise DomainError(f"t must be > 0, got {t}")
    if factor.v0 <= 0:
        raise DomainError("moment-matched sqrt process needs v0 > 0")
    mu, psi, psi_sq = _drift_vol_arrays(factor, np.array([t]), clamp=clamp)
    return DriftVolSchedule(t=t, mu_u=float(mu[0]), psi_u=float(psi[0]), psi_sq=float(psi_sq[0]))


# Polynomials in (u1, u2) of degree <= 2: coefficient arrays over BASIS with
# u_j^2 stored as v_j and u1 u2 as y.


def _linear(const=0.0, u1=0.0, u2=0.0) -> NDArray[np.float64]:
    return np.array([const, u1, u2, 0.0, 0.0, 0.0])


def _mul(p: NDArray, q: NDArray) -> NDArray:
    """Product of degree-1 polynomials (vectorized over leading axes)."""
    out = np.zeros(np.broadcast_shapes(p.shape, q.shape))
    out[..., 0] = p[..., 0] * q[..., 0]
    out[..., 1] = p[..., 0] * q[..., 1] + p[..., 1] * q[..., 0]
    out[..., 2] = p[..., 0] * q[..., 2] + p[..., 2] * q[..., 0]
    out[..., 3] = p[..., 1] * q[..., 1]
    out[..., 4] = p[..., 2] * q[..., 2]
    out[..., 5] = p[..., 1] * q[..., 2] + p[..., 2] * q[..., 1]
    return out


def _quad(a: NDArray, C: NDArray, b: NDArray) -> NDArray:
    """sum_ik C_ik a_i b_k for vectors of degree-1 polynomials, shape (4, 6)."""
    return np.einsum("ik,ikp->p", C, _mul(a[:, None, :], b[None, :, :]))


@dataclass(frozen=True)
class _CorrelatedModel:
    gamma: float
    r: float
    rho_w: float
    kappa: NDArray
    theta: NDArray
    sigma: NDArray
    rho: NDArray
    rho_bar: NDArray
    drift: NDArray  # [lambda1, lambda2, mu1, mu2]
    phi: NDArray  # [phi_s1, phi_s2, phi_v1, phi_v2]
    corr: NDArray  # Brownian correlation over [W1, W2, Z1, Z2]
    solve: NDArray  # (gamma C + Phi)^-1

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig) -> "_CorrelatedModel":
        rho_w = scenario.correlation.rho_w if scenario.is_correlated else 0.0
        factors = scenario.factors
        corr = np.eye(4)
        corr[0, 1] = corr[1, 0] = rho_w
        phi = np.array([*scenario.prefs.phi_s, *scenario.prefs.phi_v])
        gamma = scenario.gamma
        return cls(
            gamma=gamma,
            r=scenario.market.r,
            rho_w=rho_w,
            kappa=np.array([f.kappa for f in factors]),
            theta=np.array([f.theta for f in factors]),
            sigma=np.array([f.sigma_v for f in factors]),
            rho=np.array([f.rho for f in factors]),
            rho_bar=np.array([f.rho_bar for f in factors]),
            drift=np.array([f.lambda_risk for f in factors] + [f.mu_risk for f in factors]),
            phi=phi,
            corr=corr,
            solve=np.linalg.inv(gamma * corr + np.diag(phi)),
        )

    def state_loading(self, H: NDArray, psi: NDArray) -> NDArray:
        """
        sum_s H_s * (diffusion loading of state s) over [W1, W2, Z1, Z2].

        Factor j contributes P_j = sigma_j HV_j u_j + psi_j HU_j + psi_j HY u_k,
        loaded rho_j on W_j and rho_bar_j on Z_j.
        """
        P = [
            _linear(psi[0] * H[HU1], self.sigma[0] * H[HV1], psi[0] * H[HY]),
            _linear(psi[1] * H[HU2], psi[1] * H[HY], self.sigma[1] * H[HV2]),
        ]
        return np.array(
            [self.rho[0] * P[0], self.rho[1] * P[1], self.rho_bar[0] * P[0], self.rho_bar[1] * P[1]]
        )

    def premia(self) -> NDArray:
        """Risk-premium polynomials lambda_j u_j and mu_j u_j per wealth loading."""
        return np.array(
            [
                _linear(u1=self.drift[0]),
                _linear(u2=self.drift[1]),
                _linear(u1=self.drift[2]),
                _linear(u2=self.drift[3]),
            ]
        )

    def controls(self, H: NDArray, psi: NDArray) -> tuple[NDArray, NDArray]:
        """
        Scaled exposures w = (b^S_1, b^S_2, b^V_1, b^V_2) with b = beta * u and
        worst-case distortions, both as degree-1 polynomials.

        The first-order condition (gamma C + Phi) w = m + C l - Phi l / (1 - gamma)
        follows from the HJB, and e = Phi (w + l / (1 - gamma)).
        """
        one_g = 1.0 - self.gamma
        loading = self.state_loading(H, psi)
        rhs = self.premia() + self.corr @ loading - self.phi[:, None] * loading / one_g
        w = self.solve @ rhs
        e = self.phi[:, None] * (w + loading / one_g)
        return w, e

    def generator(self, H: NDArray, mu_u: NDArray, psi: NDArray) -> NDArray:
        """HJB divided by J without the time derivative, at the optimal controls."""
        g = self.gamma
        one_g = 1.0 - g
        loading = self.state_loading(H, psi)
        w, _ = self.controls(H, psi)
        m = self.premia()
        R = np.zeros(6)
        R[0] = (
            one_g * self.r
            + (self.kappa * self.theta) @ H[[HV1, HV2]]
            + mu_u @ H[[HU1, HU2]]
            + H[HY] * self.rho_w * self.rho[0] * self.rho[1] * psi[0] * psi[1]
        )
        R[3] -= self.kappa[0] * H[HV1]
        R[4] -= self.kappa[1] * H[HV2]
        R[1] += H[HY] * mu_u[1]
        R[2] += H[HY] * mu_u[0]
        R += 0.5 * _quad(loading, self.corr, loading)
        R += one_g * _mul(w, m).sum(axis=0)
        R -= 0.5 * g * one_g * _quad(w, self.corr, w)
        R += one_g * _quad(w, self.corr, loading)
        shifted = w + loading / one_g
        R -= 0.5 * one_g * (self.phi[:, None] * _mul(shifted, shifted)).sum(axis=0)
        return R


def _require_correlated(scenario: ScenarioConfig):
    if scenario.has_jumps:
        raise UnsupportedConfigurationError("correlated factors cannot be combined with jumps")
    for j, factor in enumerate(scenario.factors):
        if factor.v0 <= 0:
            raise ConfigurationError(f"factor{j + 1}.v0 must be > 0 for the sqrt approximation")


def solve_affine_system(scenario: ScenarioConfig, step: float = ODE_STEP) -> AffineCoeffs:
    """
    Integrate the coefficient ODEs of the extended affine value function.

    Calendar-time dependence enters through mu^U(t) and psi^U(t) at t = T - tau,
    so the system is time-inhomogeneous. Without a correlation section rho_w = 0.
    A negative psi^U squared is floored at zero unless the correlation section
    sets negative_psi: error. ``step`` shrinks as needed so the horizon holds a
    whole number of steps.

    Raises:
        BlowUpError: If the integration explodes
        ModelBreakdownError: If psi^U squared turns negative
    """
    _require_correlated(scenario)
    if scenario.report is not None and not all(scenario.report.novikov):
        logger.warning("Worst-case measure fails the Novikov bound; results may be inadmissible")
    model = _CorrelatedModel.from_scenario(scenario)
    horizon = scenario.horizon
    n_steps = max(1, math.ceil(horizon / step - 1e-9))
    half = horizon / n_steps / 2.0
    t_lattice = horizon - np.arange(2 * n_steps + 1) * half
    clamp = scenario.correlation.negative_psi == "clamp" if scenario.correlation else True
    schedules = [_drift_vol_arrays(f, t_lattice, clamp=clamp) for f in scenario.factors]
    clamped = [j + 1 for j, s in enumerate(schedules) if np.any(s[2] < -PSI_TOLERANCE)]
    if clamped:
        logger.warning(
            f"Var[sqrt(V)] decreases for factor(s) {clamped}; psi^U floored at zero there"
        )
    mu_table = np.column_stack([s[0] for s in schedules])
    psi_table = np.column_stack([s[1] for s in schedules])

    def rhs(tau, y):
        k = int(round(tau / half))
        return model.generator(y, mu_table[k], psi_table[k])

    solution = integrate(rhs, np.zeros(6), tau_end=horizon, step=2 * half)
    logger.info(
        f"Correlated affine system solved (rho_w={model.rho_w}), "
        f"error estimate {solution.error_estimate:.2e}"
    )
    return AffineCoeffs(solution=solution, horizon=horizon, clamp_psi=clamp)


def _psi_at(scenario: ScenarioConfig, t: float, clamp: bool) -> tuple[NDArray, NDArray]:
    arrays = [_drift_vol_arrays(f, np.array([t]), clamp=clamp) for f in scenario.factors]
    return np.array([a[0][0] for a in arrays]), np.array([a[1][0] for a in arrays])


def control_coefficients(
    scenario: ScenarioConfig, affine: AffineCoeffs, t: float
) -> ApproxControls:
    """Coefficient triples of the approximate exposures and worst-case distortions at t."""
    model = _CorrelatedModel.from_scenario(scenario)
    _, psi = _psi_at(scenario, t, affine.clamp_psi)
    w, e = model.controls(affine.all_at(scenario.horizon - t), psi)

    def triples(polys):
        # rows j: (const, u_j, u_k)
        return np.array(
            [[polys[0][0], polys[0][1], polys[0][2]], [polys[1][0], polys[1][2], polys[1][1]]]
        )

    return ApproxControls(a=triples(w[:2]), b=triples(w[2:]), g=triples(e[:2]), k=triples(e[2:]))


def approx_controls(
    scenario: ScenarioConfig, affine: AffineCoeffs, t: float, u1: float, u2: float
) -> tuple[Exposures, WorstCase]:
    """
    Approximate robust exposures and worst-case distortions at (t, u1, u2).

    Raises:
        DomainError: If u1 <= 0 or u2 <= 0
    """
    if u1 <= 0 or u2 <= 0:
        raise DomainError(f"sqrt-variance states must be > 0, got u1={u1}, u2={u2}")
    coefficients = control_coefficients(scenario, affine, t)
    return coefficients.exposures(u1, u2), coefficients.worst_case(u1, u2)


def affine_hjb_terms(
    scenario: ScenarioConfig,
    affine: AffineCoeffs,
    t: float,
    v: tuple[float, float],
    exposures: Exposures,
    worst_case: WorstCase,
    x: float = 1.0,
) -> NDArray[np.float64]:
    """
    Terms of the correlated robust HJB at a consistent state (u_j = sqrt(v_j),
    y = u1 u2), built directly from the diffusion loading matrix of
    [X, V1, V2, U1, U2, Y] on [W1, W2, Z1, Z2].
    """
    model = _CorrelatedModel.from_scenario(scenario)
    g = model.gamma
    one_g = 1.0 - g
    u = np.sqrt(np.asarray(v, dtype=float))
    y = u[0] * u[1]
    tau = scenario.horizon - t
    H = affine.all_at(tau)
    mu_u, psi = _psi_at(scenario, t, affine.clamp_psi)
    state = np.array([1.0, u[0], u[1], v[0], v[1], y])

    def exponent(s):
        return float(
            sum(float(affine.solution(s, k)) * state[k] for k in range(6))
        )

    J = x**one_g / one_g * math.exp(exponent(tau))
    J_t = -_tau_derivative(exponent, tau, affine.horizon) * J
    grads = np.array([H[HV1], H[HV2], H[HU1], H[HU2], H[HY]]) * J  # over [V1, V2, U1, U2, Y]

    bs = np.array(exposures.beta_s) * u
    bv = np.array(exposures.beta_v) * u
    es, ev = np.array(worst_case.e_s), np.array(worst_case.e_v)
    rho, rho_bar, sig = model.rho, model.rho_bar, model.sigma

    loading = np.zeros((6, 4))
    loading[0] = [bs[0], bs[1], bv[0], bv[1]]
    for j in range(2):
        k = 1 - j
        loading[1 + j, j] = sig[j] * u[j] * rho[j]
        loading[1 + j, 2 + j] = sig[j] * u[j] * rho_bar[j]
        loading[3 + j, j] = psi[j] * rho[j]
        loading[3 + j, 2 + j] = psi[j] * rho_bar[j]
        loading[5, j] = u[k] * psi[j] * rho[j]
        loading[5, 2 + j] = u[k] * psi[j] * rho_bar[j]
    cov = loading @ model.corr @ loading.T
    shift = loading[1:] @ np.concatenate([es, ev])

    drift = np.array(
        [
            model.kappa[0] * (model.theta[0] - v[0]),
            model.kappa[1] * (model.theta[1] - v[1]),
            mu_u[0],
            mu_u[1],
            mu_u[0] * u[1] + mu_u[1] * u[0] + model.rho_w * rho[0] * rho[1] * psi[0] * psi[1],
        ]
    ) - shift

    J_x = one_g * J / x
    hess = np.outer(H[[HV1, HV2, HU1, HU2, HY]], H[[HV1, HV2, HU1, HU2, HY]]) * J
    premium = bs @ (model.drift[:2] * u) + bv @ (model.drift[2:] * u) - bs @ es - bv @ ev
    terms = [
        J_t,
        J_x * x * (model.r + premium),
        0.5 * (-g * one_g * J / x**2) * x**2 * cov[0, 0],
        float(grads @ drift),
        0.5 * float(np.sum(hess * cov[1:, 1:])),
        float(one_g * J * (H[[HV1, HV2, HU1, HU2, HY]] @ cov[0, 1:])),
    ]
    for e, phi in zip(np.concatenate([es, ev]), model.phi, strict=True):
        if phi == 0:
            terms.append(0.0 if e == 0 else math.inf)
        else:
            terms.append(one_g * J * e**2 / (2.0 * phi))
    return np.array(terms)


def affine_hjb_objective(scenario, affine, t, v, exposures, worst_case, x: float = 1.0) -> float:
    """Sum of affine_hjb_terms."""
    return float(np.sum(affine_hjb_terms(scenario, affine, t, v, exposures, worst_case, x)))


def affine_hjb_residual(scenario, affine, t, v, exposures, worst_case, x: float = 1.0) -> float:
    """Relative residual |sum| / sum |terms| of the correlated HJB."""
    terms = affine_hjb_terms(scenario, affine, t, v, exposures, worst_case, x)
    return float(abs(terms.sum()) / np.abs(terms).sum())
