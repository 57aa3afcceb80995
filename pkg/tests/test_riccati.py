"""Tests for Riccati coefficients and the value-function solvers."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from robustvol.core.model import build_scenario
from robustvol.core.ode import integrate, uniform_grid
from robustvol.core.riccati import (
    ReductionMode,
    Regime,
    RiccatiCoeffs,
    closed_form_H,
    closed_form_h,
    closed_form_h_log,
    derive_complete_coeffs,
    derive_incomplete_coeffs,
    derive_jump_coeffs,
    jump_increment,
    jump_objective,
    resolve_reduction,
    riccati_integral,
    solve_complete_system,
    solve_incomplete_system,
    solve_jump_system,
    solve_riccati_numeric,
    solve_suboptimal_system,
    value_coefficients,
)
from robustvol.core.strategy import optimal_exposures_complete
from robustvol.errors import (
    ConfigurationError,
    ExplosiveSolutionError,
    RiccatiPoleError,
    UnsupportedConfigurationError,
)
from tests.conftest import make_document


class TestCoefficients:
    """Tests for the per-regime Riccati coefficients."""

    def test_discriminant_consistent(self, scenario):
        for k in derive_complete_coeffs(scenario):
            assert k.d**2 == pytest.approx(k.a**2 - 4 * k.b * k.c, rel=1e-12)

    def test_no_ambiguity_no_leverage(self):
        """With phi = 0, rho = 0 and mu = 0 only the hedging and premium terms survive."""
        document = make_document(
            factor1={"rho": 0.0, "mu": 0.0},
            factor2={"rho": 0.0, "mu": 0.0},
            prefs={"phi_s1": 0.0, "phi_s2": 0.0, "phi_v1": 0.0, "phi_v2": 0.0},
        )
        scenario = build_scenario(document, warn=False)
        gamma = scenario.gamma
        for k, f in zip(derive_complete_coeffs(scenario), scenario.factors, strict=True):
            assert k.a == pytest.approx(-f.kappa)
            assert k.b == pytest.approx(f.sigma_v**2 / (2 * gamma))
            assert k.c == pytest.approx((1 - gamma) * f.lambda_risk**2 / (2 * gamma))

    def test_ambiguity_lowers_premium_term(self, scenario):
        base = derive_complete_coeffs(scenario.with_phi(0, phi_s=0.0, phi_v=0.0))[0]
        averse = derive_complete_coeffs(scenario.with_phi(0, phi_s=2.0, phi_v=2.0))[0]
        assert abs(averse.c) < abs(base.c)

    def test_jump_coeffs_shift_only_c(self, jump_scenario):
        base = derive_complete_coeffs(jump_scenario.without_jumps())
        jump = derive_jump_coeffs(jump_scenario)
        increment = jump_increment(jump_scenario)
        for k0, k1 in zip(base, jump, strict=True):
            assert k1.a == k0.a
            assert k1.b == k0.b
            assert k1.c == pytest.approx(k0.c + increment)

    def test_complete_rejects_jumps(self, jump_scenario):
        with pytest.raises(UnsupportedConfigurationError):
            derive_complete_coeffs(jump_scenario)

    def test_complete_rejects_correlation(self, correlated_scenario):
        with pytest.raises(UnsupportedConfigurationError):
            derive_complete_coeffs(correlated_scenario)


class TestJumpTerm:
    """Tests for the jump contribution to the forcing term."""

    def test_increment_is_minimum(self, jump_scenario):
        jumps = jump_scenario.jumps
        gamma = jump_scenario.gamma
        beta_n = ((jumps.nu_p / jumps.nu_q) ** (1 / gamma) - 1) / jumps.jump_size
        best = jump_objective(jump_scenario, beta_n)
        assert best == pytest.approx(jump_increment(jump_scenario), abs=1e-14)
        for shift in (-0.5, -0.1, 0.1, 0.5):
            assert jump_objective(jump_scenario, beta_n + shift) >= best

    def test_increment_vanishes_without_premium(self):
        document = make_document(jumps={"j_s": -0.15, "nu_p": 0.2, "nu_q": 0.2})
        scenario = build_scenario(document, warn=False)
        assert jump_increment(scenario) == pytest.approx(0.0, abs=1e-15)

    def test_wealth_ruin_is_infinite(self, jump_scenario):
        assert jump_objective(jump_scenario, 1.0 / 0.15 + 1.0) == math.inf

    def test_no_jumps(self, scenario):
        assert jump_objective(scenario, 0.3) == 0.0
        with pytest.raises(ConfigurationError):
            jump_increment(scenario)


class TestClosedForm:
    """Tests for the closed-form Riccati solution."""

    def test_zero_at_origin(self, scenario):
        for k in derive_complete_coeffs(scenario):
            assert closed_form_H(k, 0.0) == 0.0

    def test_matches_numeric(self, scenario):
        taus = uniform_grid(10.0, 0.01)
        for phi_s in (0.0, 0.5, 1.0):
            for phi_v in (0.0, 0.5, 1.0):
                cell = scenario.with_phi(0, phi_s, phi_v).with_phi(1, phi_s, phi_v)
                for k in derive_complete_coeffs(cell):
                    numeric = solve_riccati_numeric(k, taus)
                    gap = np.max(np.abs(closed_form_H(k, taus) - numeric.values))
                    assert gap < 1e-6

    def test_double_root(self):
        coeffs = RiccatiCoeffs.from_abc(-2.0, 1.0, 1.0)
        assert coeffs.d == 0.0
        numeric = solve_riccati_numeric(coeffs, np.array([0.0, 1.0, 3.0]))
        expected = closed_form_H(coeffs, [0.0, 1.0, 3.0])
        np.testing.assert_allclose(expected, numeric.values, atol=1e-9)

    def test_pole(self):
        # H = 2 tau / (2 - 2 tau) has its pole at tau = 1
        coeffs = RiccatiCoeffs.from_abc(2.0, 1.0, 1.0)
        with pytest.raises(RiccatiPoleError):
            closed_form_H(coeffs, 1.0)

    def test_negative_discriminant(self):
        coeffs = RiccatiCoeffs.from_abc(0.0, 1.0, 1.0)
        assert math.isnan(coeffs.d)
        with pytest.raises(ExplosiveSolutionError):
            closed_form_H(coeffs, 0.5)

    def test_zero_forcing(self):
        coeffs = RiccatiCoeffs.from_abc(-1.0, 0.5, 0.0)
        assert np.all(closed_form_H(coeffs, np.linspace(0, 5, 6)) == 0.0)

    def test_scalar_input_returns_float(self, scenario):
        assert isinstance(closed_form_H(derive_complete_coeffs(scenario)[0], 2.5), float)


class TestLogTerm:
    """Tests for h(tau) and the integrated Riccati solution."""

    def test_integral_matches_quadrature(self, scenario):
        k = derive_complete_coeffs(scenario)[0]
        expected, _ = quad(lambda s: closed_form_H(k, s), 0.0, 4.0, epsabs=1e-12)
        assert riccati_integral(k, 4.0) == pytest.approx(expected, abs=1e-9)

    def test_two_routes_agree(self, scenario):
        coeffs = derive_complete_coeffs(scenario)
        assert closed_form_h(scenario, 10.0) == pytest.approx(
            closed_form_h_log(scenario, coeffs, 10.0), abs=1e-10
        )

    def test_matches_joint_integration(self, scenario):
        coeffs = derive_complete_coeffs(scenario)
        f1, f2 = scenario.factors
        r_term = (1 - scenario.gamma) * scenario.market.r

        def rhs(tau, y):
            return np.array(
                [
                    coeffs[0].rhs(y[0]),
                    coeffs[1].rhs(y[1]),
                    f1.kappa * f1.theta * y[0] + f2.kappa * f2.theta * y[1] + r_term,
                ]
            )

        joint = integrate(rhs, np.zeros(3), tau_end=10.0)
        assert closed_form_h(scenario, 10.0) == pytest.approx(joint.final[2], abs=1e-8)

    def test_h_at_zero(self, scenario):
        assert closed_form_h(scenario, 0.0) == 0.0


class TestValueSystems:
    """Tests for the tabulated value coefficients of each regime."""

    def test_complete_system(self, scenario):
        values = solve_complete_system(scenario)
        coeffs = derive_complete_coeffs(scenario)
        assert values.regime is Regime.COMPLETE
        assert values.horizon == 10.0
        assert float(values.H(0, 7.3)) == pytest.approx(closed_form_H(coeffs[0], 7.3))
        assert float(values.h(10.0)) == pytest.approx(closed_form_h(scenario, 10.0), abs=1e-8)

    def test_jump_system_differs(self, jump_scenario):
        jump = solve_jump_system(jump_scenario)
        plain = solve_complete_system(jump_scenario.without_jumps())
        assert jump.regime is Regime.JUMP
        assert float(jump.H(0, 5.0)) != pytest.approx(float(plain.H(0, 5.0)))

    def test_value_coefficients_dispatch(self, jump_scenario):
        assert value_coefficients(jump_scenario, "jump").regime is Regime.JUMP
        assert value_coefficients(jump_scenario, "complete").regime is Regime.COMPLETE
        with pytest.raises(ConfigurationError):
            value_coefficients(jump_scenario, Regime.PI1)

    def test_incomplete_matches_reduced_riccati(self, short_scenario):
        """Substituting the optimal stock weight gives a Riccati equation per factor."""
        values = solve_incomplete_system(short_scenario, ReductionMode.PER_FACTOR)
        coeffs = derive_incomplete_coeffs(short_scenario)
        taus = np.linspace(0.0, 2.0, 41)
        for j in range(2):
            gap = np.abs(np.asarray(values.H(j, taus)) - closed_form_H(coeffs[j], taus))
            assert gap.max() < 1e-6

    def test_incomplete_error_estimate(self, short_scenario):
        values = solve_incomplete_system(short_scenario, "per-factor")
        assert values.reduction is ReductionMode.PER_FACTOR
        assert values.solution.error_estimate < 1e-8

    def test_single_factor_reduction(self, short_scenario):
        values = solve_incomplete_system(short_scenario, ReductionMode.SINGLE_FACTOR_1)
        assert float(values.H(1, 2.0)) == 0.0
        assert float(values.H(0, 2.0)) != 0.0


    def test_distinct_factors_need_a_reduction(self, short_scenario):
        with pytest.raises(UnsupportedConfigurationError, match="single-factor"):
            solve_incomplete_system(short_scenario)
        with pytest.raises(UnsupportedConfigurationError):
            value_coefficients(short_scenario, Regime.INCOMPLETE)

    def test_value_coefficients_pass_reduction(self, short_scenario):
        values = value_coefficients(short_scenario, "incomplete", "single-factor-2")
        assert values.reduction is ReductionMode.SINGLE_FACTOR_2
        assert float(values.H(0, 2.0)) == 0.0
    def test_no_derivatives_is_worse(self, short_scenario):
        """Without derivatives the investor keeps more variance exposure in J."""
        incomplete = solve_incomplete_system(short_scenario, ReductionMode.PER_FACTOR)
        complete = solve_complete_system(short_scenario)
        for j in range(2):
            assert float(incomplete.H(j, 2.0)) > float(complete.H(j, 2.0))

    def test_suboptimal_with_optimal_exposures(self, short_scenario):
        def schedule(tau):
            return optimal_exposures_complete(short_scenario, tau)

        suboptimal = solve_suboptimal_system(short_scenario, schedule)
        coeffs = derive_complete_coeffs(short_scenario)
        for j in range(2):
            assert float(suboptimal.H(j, 2.0)) == pytest.approx(
                closed_form_H(coeffs[j], 2.0), abs=1e-8
            )


class TestReduction:
    """Tests for choosing the incomplete-market reduction."""

    def test_distinct_factors_raise_without_reduction(self, scenario):
        """Two different factors have no affine incomplete-market solution."""
        with pytest.raises(UnsupportedConfigurationError, match="distinct factors"):
            resolve_reduction(scenario, None)

    def test_explicit_reductions_pass_through(self, scenario):
        assert resolve_reduction(scenario, "single-factor-1") is ReductionMode.SINGLE_FACTOR_1
        assert resolve_reduction(scenario, ReductionMode.PER_FACTOR) is ReductionMode.PER_FACTOR

    def test_identical_blocks(self):
        factor = make_document()["factor1"]
        scenario = build_scenario(make_document(factor2=factor), warn=False)
        assert resolve_reduction(scenario, None) is ReductionMode.IDENTICAL

    def test_identical_requires_equal_blocks(self, scenario):
        with pytest.raises(UnsupportedConfigurationError):
            resolve_reduction(scenario, "identical")

    def test_active_factors(self):
        assert ReductionMode.SINGLE_FACTOR_2.active_factors == (1,)
        assert ReductionMode.PER_FACTOR.active_factors == (0, 1)
