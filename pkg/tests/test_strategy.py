"""Tests for exposures, worst-case distortions and portfolio weights."""

import math
from dataclasses import replace
from importlib.resources import files

import numpy as np
import pytest

from robustvol.core.model import build_scenario, novikov_margin
from robustvol.core.riccati import (
    ReductionMode,
    incomplete_weight,
    solve_complete_system,
    solve_incomplete_system,
    solve_jump_system,
)
from robustvol.core.strategy import (
    Exposures,
    OptionGreeks,
    WorstCase,
    exposure_matrix,
    exposures_to_weights,
    general_pi_s_pointwise,
    general_suboptimal_worst_case,
    hjb_objective,
    hjb_residual,
    incomplete_exposures,
    jump_exposures,
    jump_worst_case,
    load_greeks,
    novikov_profile,
    optimal_exposures_complete,
    optimal_stock_weight_incomplete,
    value_derivatives,
    worst_case_complete,
    worst_case_incomplete,
)
from robustvol.errors import (
    ConfigurationError,
    DomainError,
    MarketIncompletenessError,
    UnsupportedConfigurationError,
)
from tests.conftest import make_document

STATE = (0.05, 0.03)


def packaged(name: str):
    return files("robustvol") / "data" / name


class TestOptimalExposures:
    """Tests for the complete-market exposures."""

    def test_myopic_at_maturity(self, scenario):
        exposure = optimal_exposures_complete(scenario.with_phi(0, phi_s=1.0), 0.0)
        assert exposure.beta_s[0] == pytest.approx(0.6)
        assert exposure.beta_v[0] == pytest.approx(-3.0 / 4.5)
        assert exposure.beta_n is None

    def test_no_ambiguity_is_merton_like(self, scenario):
        exposure = optimal_exposures_complete(scenario.with_phi(1, phi_s=0.0), 0.0)
        assert exposure.beta_s[1] == pytest.approx(2.0 / 4.0)

    def test_ambiguity_shrinks_myopic_demand(self, scenario):
        calm = optimal_exposures_complete(scenario.with_phi(0, phi_s=0.0), 5.0)
        averse = optimal_exposures_complete(scenario.with_phi(0, phi_s=2.0), 5.0)
        assert abs(averse.beta_s[0]) < abs(calm.beta_s[0])

    def test_as_vector(self):
        exposure = Exposures(beta_s=(1.0, 2.0), beta_v=(3.0, 4.0), beta_n=5.0)
        np.testing.assert_array_equal(exposure.as_vector(), [1.0, 2.0, 3.0, 4.0, 5.0])


class TestWorstCase:
    """Tests for the worst-case drift distortions."""

    def test_no_ambiguity_no_distortion(self, scenario):
        calm = scenario.with_phi(0, 0.0, 0.0).with_phi(1, 0.0, 0.0)
        wc = worst_case_complete(calm, 5.0, *STATE)
        assert wc.e_s == (0.0, 0.0)
        assert wc.e_v == (0.0, 0.0)

    def test_scales_with_sqrt_variance(self, scenario):
        low = worst_case_complete(scenario, 5.0, 0.01, 0.01)
        high = worst_case_complete(scenario, 5.0, 0.04, 0.04)
        assert high.e_s[0] == pytest.approx(2.0 * low.e_s[0])
        assert high.e_v[1] == pytest.approx(2.0 * low.e_v[1])

    def test_matches_general_formula(self, scenario):
        """The optimal investor's distortions follow from J's derivatives."""
        tau = 6.0
        values = solve_complete_system(scenario)
        derivs = value_derivatives(scenario, values, scenario.horizon - tau, 1.0, *STATE)
        exposure = optimal_exposures_complete(scenario, tau)
        general = general_suboptimal_worst_case(scenario, derivs, exposure, *STATE)
        closed = worst_case_complete(scenario, tau, *STATE)
        for j in range(2):
            assert general.e_s[j] == pytest.approx(closed.e_s[j], rel=1e-10)
            assert general.e_v[j] == pytest.approx(closed.e_v[j], rel=1e-10)

    def test_negative_variance(self, scenario):
        with pytest.raises(DomainError):
            worst_case_complete(scenario, 1.0, -0.01, 0.02)

    def test_novikov_profile_at_maturity(self, scenario):
        profile = novikov_profile(scenario, [0.0, 5.0, 10.0])
        assert profile.shape == (3, 2)
        for j, f in enumerate(scenario.factors):
            assert profile[0, j] * f.sigma_v**2 == pytest.approx(novikov_margin(scenario)[j][0])

    def test_incomplete_worst_case(self, twin_scenario):
        wc = worst_case_incomplete(twin_scenario, 1.0, 0.04, 0.04)
        assert all(math.isfinite(e) for e in (*wc.e_s, *wc.e_v))
        assert wc.e_s[0] == pytest.approx(wc.e_s[1])

    def test_incomplete_worst_case_distinct_factors(self, short_scenario):
        with pytest.raises(UnsupportedConfigurationError):
            worst_case_incomplete(short_scenario, 1.0, *STATE)
        with pytest.raises(UnsupportedConfigurationError):
            worst_case_incomplete(short_scenario, 1.0, *STATE, reduction="per-factor")

    def test_incomplete_worst_case_single_factor(self, short_scenario):
        single = worst_case_incomplete(short_scenario, 1.0, *STATE, reduction="single-factor-1")
        assert single.e_s[1] == 0.0
        assert single.e_v[1] == 0.0


class TestHjbSaddlePoint:
    """The closed forms solve the robust HJB equation."""

    def _setup(self, scenario, tau=4.0):
        values = solve_complete_system(scenario)
        t = scenario.horizon - tau
        derivs = value_derivatives(scenario, values, t, 1.3, *STATE)
        exposure = optimal_exposures_complete(scenario, tau)
        wc = worst_case_complete(scenario, tau, *STATE)
        return derivs, exposure, wc

    def test_residual_vanishes(self, scenario):
        assert hjb_residual(scenario, *self._setup(scenario)) < 1e-6

    def test_residual_near_maturity(self, scenario):
        assert hjb_residual(scenario, *self._setup(scenario, tau=0.001)) < 1e-6

    def test_investor_maximizes(self, scenario):
        derivs, exposure, wc = self._setup(scenario)
        best = hjb_objective(scenario, derivs, exposure, wc)
        scale = abs(derivs.J)
        for k in range(4):
            for shift in (-0.05, 0.05):
                vector = exposure.as_vector()
                vector[k] += shift
                moved = Exposures(beta_s=tuple(vector[:2]), beta_v=tuple(vector[2:]))
                assert hjb_objective(scenario, derivs, moved, wc) < best + 1e-12 * scale

    def test_nature_minimizes(self, scenario):
        derivs, exposure, wc = self._setup(scenario)
        best = hjb_objective(scenario, derivs, exposure, wc)
        scale = abs(derivs.J)
        for shift in (-0.01, 0.01):
            moved = replace(wc, e_s=(wc.e_s[0] + shift, wc.e_s[1]))
            assert hjb_objective(scenario, derivs, exposure, moved) > best - 1e-12 * scale
            moved = replace(wc, e_v=(wc.e_v[0], wc.e_v[1] + shift))
            assert hjb_objective(scenario, derivs, exposure, moved) > best - 1e-12 * scale

    def test_jump_residual(self, jump_scenario):
        tau = 3.0
        values = solve_jump_system(jump_scenario)
        derivs = value_derivatives(jump_scenario, values, jump_scenario.horizon - tau, 1.0, *STATE)
        exposure = jump_exposures(jump_scenario, tau)
        wc = jump_worst_case(jump_scenario, tau, *STATE)
        assert hjb_residual(jump_scenario, derivs, exposure, wc) < 1e-6

    def test_zero_ambiguity_with_distortion_is_infinite(self, scenario):
        calm = scenario.with_phi(0, 0.0, 0.0)
        derivs, exposure, _ = self._setup(calm)
        wc = WorstCase(e_s=(0.1, 0.0), e_v=(0.0, 0.0), state=STATE)
        assert hjb_objective(calm, derivs, exposure, wc) == math.inf

    def test_wealth_must_be_positive(self, scenario):
        with pytest.raises(DomainError):
            value_derivatives(scenario, solve_complete_system(scenario), 0.0, 0.0, *STATE)


class TestIncompleteWeights:
    """Tests for the stock weight without derivative trading."""

    def test_general_weight_reduces_to_single_factor(self, scenario):
        Hbar = (-0.3, -0.1)
        weight = general_pi_s_pointwise(scenario, Hbar, 0.04, 0.0)
        expected = incomplete_weight(scenario.factors[0], scenario.gamma, 0.5, Hbar[0])
        assert weight == pytest.approx(expected)

    def test_general_weight_undefined_at_zero(self, scenario):
        with pytest.raises(DomainError):
            general_pi_s_pointwise(scenario, (0.0, 0.0), 0.0, 0.0)

    def test_distinct_factors_have_no_default_weight(self, short_scenario):
        with pytest.raises(UnsupportedConfigurationError, match="single-factor"):
            optimal_stock_weight_incomplete(short_scenario, 1.0)

    def test_per_factor_has_no_single_weight(self, short_scenario):
        with pytest.raises(UnsupportedConfigurationError, match="per-factor"):
            optimal_stock_weight_incomplete(short_scenario, 1.0, "per-factor")

    def test_single_factor_weight(self, short_scenario):
        values = solve_incomplete_system(short_scenario, ReductionMode.SINGLE_FACTOR_1)
        expected = incomplete_weight(
            short_scenario.factors[0], short_scenario.gamma, 0.5, float(values.H(0, 1.0))
        )
        weight = optimal_stock_weight_incomplete(short_scenario, 1.0, "single-factor-1")
        assert weight == pytest.approx(expected)

    def test_incomplete_exposures(self, short_scenario):
        values = solve_incomplete_system(short_scenario, ReductionMode.SINGLE_FACTOR_1)
        exposure = incomplete_exposures(short_scenario, values, 0.0)
        assert exposure.beta_v == (0.0, 0.0)
        assert exposure.beta_s == (pytest.approx(3.0 / 4.5), 0.0)

    def test_identical_factor_exposures(self, twin_scenario):
        values = solve_incomplete_system(twin_scenario)
        assert values.reduction is ReductionMode.IDENTICAL
        exposure = incomplete_exposures(twin_scenario, values, 0.0)
        assert exposure.beta_s == (pytest.approx(3.0 / 4.5), pytest.approx(3.0 / 4.5))

    def test_per_factor_exposures_rejected(self, short_scenario):
        values = solve_incomplete_system(short_scenario, ReductionMode.PER_FACTOR)
        with pytest.raises(UnsupportedConfigurationError):
            incomplete_exposures(short_scenario, values, 0.0)


class TestJumpExposures:
    """Tests for exposures with jump risk."""

    def test_jump_exposure_formula(self, jump_scenario):
        exposure = jump_exposures(jump_scenario, 5.0)
        expected = ((0.1 / 0.3) ** 0.25 - 1.0) / -0.15
        assert exposure.beta_n == pytest.approx(expected)
        assert exposure.beta_n > 0

    def test_no_jump_premium_no_exposure(self):
        document = make_document(jumps={"j_s": -0.15, "nu_p": 0.2, "nu_q": 0.2})
        scenario = build_scenario(document, warn=False)
        assert jump_exposures(scenario, 1.0).beta_n == pytest.approx(0.0, abs=1e-15)

    def test_requires_jumps(self, scenario):
        with pytest.raises(ConfigurationError):
            jump_exposures(scenario, 1.0)


class TestPortfolioWeights:
    """Tests for translating exposures into stock and option weights."""

    def test_load_packaged_greeks(self):
        greeks = load_greeks(packaged("greeks.csv"))
        assert greeks.count == 3
        assert greeks.jump_delta is None

    def test_weights_reproduce_exposures(self, scenario):
        greeks = load_greeks(packaged("greeks.csv"))
        exposure = optimal_exposures_complete(scenario, 10.0)
        weights = exposures_to_weights(exposure, greeks, scenario)
        pi = np.array([weights.pi_s, *weights.pi_o])
        A = exposure_matrix(greeks, scenario)
        np.testing.assert_allclose(A @ pi, exposure.as_vector(), atol=1e-12)
        assert weights.cash == pytest.approx(1.0 - pi.sum())

    def test_jump_weights(self, jump_scenario):
        greeks = load_greeks(packaged("greeks_jumps.csv"))
        exposure = jump_exposures(jump_scenario, 10.0)
        weights = exposures_to_weights(exposure, greeks, jump_scenario)
        A = exposure_matrix(greeks, jump_scenario)
        assert A.shape == (5, 5)
        pi = np.array([weights.pi_s, *weights.pi_o])
        np.testing.assert_allclose(A @ pi, exposure.as_vector(), atol=1e-10)

    def test_wrong_option_count(self, jump_scenario):
        greeks = load_greeks(packaged("greeks.csv"))
        with pytest.raises(ConfigurationError, match="needs 4 options"):
            exposures_to_weights(jump_exposures(jump_scenario, 1.0), greeks, jump_scenario)

    def test_singular_loadings(self, scenario):
        greeks = OptionGreeks(
            names=("a", "b", "c"),
            price=np.array([10.0, 10.0, 8.0]),
            delta=np.array([5.0, 5.0, 3.0]),
            vega1=np.array([40.0, 40.0, 0.0]),
            vega2=np.array([0.0, 0.0, 800.0]),
        )
        with pytest.raises(MarketIncompletenessError):
            exposures_to_weights(optimal_exposures_complete(scenario, 1.0), greeks, scenario)

    def test_non_positive_price(self):
        with pytest.raises(ConfigurationError, match="strictly positive"):
            OptionGreeks(
                names=("a",),
                price=np.array([0.0]),
                delta=np.array([1.0]),
                vega1=np.array([1.0]),
                vega2=np.array([1.0]),
            )

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "greeks.csv"
        path.write_text("option,price,delta\ncall,10,5\n")
        with pytest.raises(ConfigurationError, match="missing columns"):
            load_greeks(path)
