"""Tests for the Monte Carlo engine."""

import math

import numpy as np
import pytest

from robustvol.core.correlated import cir_mean
from robustvol.core.model import build_scenario
from robustvol.core.riccati import Regime
from robustvol.core.sim import (
    BLOCK_SIZE,
    REPORT_COLUMNS,
    Measure,
    Scheme,
    SimSpec,
    mc_detection_error,
    mc_expectation_reweighted,
    mc_martingale,
    mc_objective,
    sample_terminal_variances,
    simulate_factors,
)
from robustvol.core.welfare import indirect_utility
from robustvol.errors import ConfigurationError, UnsupportedConfigurationError
from tests.conftest import make_document

CALM = {"phi_s1": 0.0, "phi_s2": 0.0, "phi_v1": 0.0, "phi_v2": 0.0}


@pytest.fixture
def one_year():
    return build_scenario(make_document(market={"T": 1.0}), warn=False)


class TestSimSpec:
    """Tests for simulation settings."""

    @pytest.mark.parametrize("kwargs", [{"dt": 0.02}, {"dt": 0.0}, {"n_paths": 0}, {"workers": 0}])
    def test_rejects_bad_settings(self, kwargs):
        with pytest.raises(ConfigurationError):
            SimSpec(**kwargs)

    def test_coerces_enums(self):
        spec = SimSpec(measure="worst-case", scheme="exact-transition")
        assert spec.measure is Measure.WORST_CASE
        assert spec.scheme is Scheme.EXACT_TRANSITION


class TestFactorPaths:
    """Tests for variance path simulation."""

    def test_shape(self, one_year):
        paths = simulate_factors(one_year, SimSpec(n_paths=50, dt=0.01), horizon=0.2)
        assert paths.variances.shape == (50, 21, 2)
        assert paths.times[-1] == pytest.approx(0.2)
        np.testing.assert_array_equal(paths.variances[:, 0], [[0.04, 0.0001]] * 50)

    def test_workers_do_not_change_paths(self, one_year):
        n_paths = 2 * BLOCK_SIZE + 500
        serial = simulate_factors(one_year, SimSpec(n_paths=n_paths, dt=0.01), horizon=0.05)
        threaded = simulate_factors(
            one_year, SimSpec(n_paths=n_paths, dt=0.01, workers=3), horizon=0.05
        )
        np.testing.assert_array_equal(serial.variances, threaded.variances)

    def test_seed_controls_draws(self, one_year):
        first = sample_terminal_variances(one_year, SimSpec(n_paths=100, seed=1), 0.1)
        second = sample_terminal_variances(one_year, SimSpec(n_paths=100, seed=2), 0.1)
        assert not np.array_equal(first, second)

    def test_deterministic_factors(self):
        document = make_document(factor1={"sigma": 0.0}, factor2={"sigma": 0.0})
        scenario = build_scenario(document, warn=False)
        spec = SimSpec(n_paths=4, dt=0.01, scheme=Scheme.EXACT_TRANSITION)
        paths = simulate_factors(scenario, spec, horizon=1.0)
        for j, factor in enumerate(scenario.factors):
            expected = cir_mean(factor, paths.times)
            np.testing.assert_allclose(paths.variances[:, :, j], [expected] * 4, rtol=1e-12)

    def test_full_truncation_stays_real(self, one_year):
        paths = simulate_factors(one_year, SimSpec(n_paths=2000, dt=0.01), horizon=1.0)
        assert np.all(np.isfinite(paths.variances))

    def test_exact_mean(self, one_year):
        spec = SimSpec(n_paths=20_000, dt=0.01, seed=3, scheme=Scheme.EXACT_TRANSITION)
        draws = sample_terminal_variances(one_year, spec, 0.5)
        for j, factor in enumerate(one_year.factors):
            stderr = draws[:, j].std(ddof=1) / math.sqrt(len(draws))
            assert abs(draws[:, j].mean() - float(cir_mean(factor, 0.5))) < 4 * stderr

    def test_worst_case_changes_drift(self, one_year):
        reference = sample_terminal_variances(one_year, SimSpec(n_paths=5000, seed=5), 1.0)
        worst = sample_terminal_variances(
            one_year, SimSpec(n_paths=5000, seed=5, measure=Measure.WORST_CASE), 1.0
        )
        assert not np.allclose(reference.mean(axis=0), worst.mean(axis=0))


class TestObjective:
    """Tests for the simulated robust objective."""

    def test_cash_only_is_deterministic(self):
        document = make_document(
            market={"T": 1.0},
            factor1={"lambda": 0.0, "mu": 0.0},
            factor2={"lambda": 0.0, "mu": 0.0},
            prefs=CALM,
        )
        scenario = build_scenario(document, warn=False)
        spec = SimSpec(n_paths=200, dt=0.01, measure=Measure.WORST_CASE)
        report = mc_objective(scenario, "complete", spec)
        gamma, r = scenario.gamma, scenario.market.r
        expected = math.exp((1 - gamma) * r * 1.0) / (1 - gamma)
        assert report.estimate == pytest.approx(expected, rel=1e-12)
        assert report.stderr == pytest.approx(0.0, abs=1e-14)

    def test_wealth_scaling(self, one_year):
        spec = SimSpec(n_paths=500, dt=0.01, measure=Measure.WORST_CASE)
        unit = mc_objective(one_year, "complete", spec)
        doubled = mc_objective(one_year, "complete", spec, x0=2.0)
        assert doubled.estimate == pytest.approx(2.0**-3 * unit.estimate, rel=1e-12)

    def test_report_row(self, one_year):
        spec = SimSpec(n_paths=100, dt=0.01, measure=Measure.WORST_CASE)
        row = mc_objective(one_year, "complete", spec).as_row()
        assert list(row) == REPORT_COLUMNS
        assert row["quantity"] == "objective"
        assert row["scheme"] == "full-truncation"

    @pytest.mark.slow
    def test_matches_value_function(self, one_year):
        spec = SimSpec(n_paths=100_000, dt=1 / 500, seed=21, measure=Measure.WORST_CASE)
        report = mc_objective(one_year, "complete", spec)
        expected = indirect_utility(one_year, "complete", 0.0, 1.0, 0.04, 0.0001).value
        assert abs(report.estimate - expected) < 4 * report.stderr + 2e-3 * abs(expected)


class TestLikelihoodRatio:
    """Tests for detection errors, the density martingale and reweighting."""

    def test_no_ambiguity_detection_is_half(self):
        calm = build_scenario(make_document(market={"T": 1.0}, prefs=CALM), warn=False)
        report = mc_detection_error(calm, SimSpec(n_paths=1000, dt=0.01))
        assert report.estimate == 0.5
        assert report.quantity == "detection_error"

    def test_detection_in_range(self, one_year):
        report = mc_detection_error(one_year, SimSpec(n_paths=4000, dt=0.01))
        assert 0.0 < report.estimate < 0.5

    def test_martingale(self, one_year):
        report = mc_martingale(one_year, SimSpec(n_paths=20_000, dt=0.01, seed=9))
        assert abs(report.estimate - 1.0) < 4 * report.stderr

    def test_antithetic_pairs(self, one_year):
        report = mc_martingale(one_year, SimSpec(n_paths=2001, dt=0.01, antithetic=True))
        assert report.n_paths == 2002
        assert abs(report.estimate - 1.0) < 4 * report.stderr + 1e-12

    def test_reweighting_recovers_reference_expectation(self, one_year):
        direct, reweighted = mc_expectation_reweighted(
            one_year, SimSpec(n_paths=20_000, dt=0.01, seed=13)
        )
        spread = math.hypot(direct.stderr, reweighted.stderr)
        assert abs(direct.estimate - reweighted.estimate) < 4 * spread

    def test_custom_test_function(self, one_year):
        direct, _ = mc_expectation_reweighted(
            one_year, SimSpec(n_paths=200, dt=0.01), lambda v: np.ones(len(v))
        )
        assert direct.estimate == 1.0


class TestUnsupported:
    """Configurations outside the simulation engine's reach."""

    def test_jumps(self, jump_scenario):
        with pytest.raises(UnsupportedConfigurationError):
            mc_objective(jump_scenario, "complete", SimSpec(n_paths=10))

    def test_correlated_wealth(self, correlated_scenario):
        with pytest.raises(UnsupportedConfigurationError):
            mc_objective(correlated_scenario, "complete", SimSpec(n_paths=10))

    def test_exact_scheme_cannot_carry_wealth(self, one_year):
        spec = SimSpec(n_paths=10, scheme=Scheme.EXACT_TRANSITION)
        with pytest.raises(UnsupportedConfigurationError):
            mc_objective(one_year, "complete", spec)
        with pytest.raises(UnsupportedConfigurationError):
            mc_detection_error(one_year, spec)

    def test_exact_scheme_reference_only(self, one_year):
        spec = SimSpec(n_paths=10, scheme=Scheme.EXACT_TRANSITION, measure=Measure.WORST_CASE)
        with pytest.raises(UnsupportedConfigurationError):
            simulate_factors(one_year, spec)

    def test_suboptimal_regime(self, one_year):
        with pytest.raises(UnsupportedConfigurationError):
            mc_objective(one_year, Regime.PI1, SimSpec(n_paths=10))

    def test_incomplete_distinct_factors(self, one_year):
        with pytest.raises(UnsupportedConfigurationError, match="single-factor"):
            mc_objective(one_year, Regime.INCOMPLETE, SimSpec(n_paths=10))
        with pytest.raises(UnsupportedConfigurationError, match="single-factor"):
            mc_detection_error(one_year, SimSpec(n_paths=10), regime="incomplete")

    def test_incomplete_single_factor(self, one_year):
        spec = SimSpec(n_paths=50, dt=0.01, measure=Measure.WORST_CASE)
        report = mc_objective(one_year, "incomplete", spec, reduction="single-factor-1")
        assert math.isfinite(report.estimate)
        assert report.estimate < 0.0
