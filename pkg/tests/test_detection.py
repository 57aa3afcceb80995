"""Tests for detection-error probabilities."""

import math
from unittest.mock import patch

import numpy as np
import pytest

from robustvol.core.detection import (
    GRID_COLUMNS,
    LoadingMode,
    Variant,
    char_fn,
    detection_error,
    detection_error_grid,
    worst_case_loadings,
)
from robustvol.core.model import build_scenario
from robustvol.core.riccati import ReductionMode, Regime
from robustvol.core.sim import SimSpec, mc_detection_error
from robustvol.core.strategy import worst_case_complete
from robustvol.errors import QuadratureError, UnsupportedConfigurationError
from tests.conftest import make_document


@pytest.fixture
def one_year():
    """Ambiguity on factor 1 only, over one year."""
    document = make_document(
        market={"T": 1.0},
        prefs={"phi_s1": 1.0, "phi_v1": 1.0, "phi_s2": 0.0, "phi_v2": 0.0},
    )
    return build_scenario(document, warn=False)


class TestLoadings:
    """Tests for the worst-case loadings q = e / sqrt(v)."""

    def test_match_worst_case(self, scenario):
        loadings = worst_case_loadings(scenario)
        q_s, q_v = loadings.at_time(0.0)
        wc = worst_case_complete(scenario, scenario.horizon, 0.04, 0.09)
        assert q_s[0, 0] == pytest.approx(wc.e_s[0] / 0.2)
        assert q_v[0, 1] == pytest.approx(wc.e_v[1] / 0.3)

    def test_constant_mode_freezes_t0(self, scenario):
        loadings = worst_case_loadings(scenario, LoadingMode.CONSTANT)
        at_start, _ = loadings.at_tau(scenario.horizon)
        at_end, _ = loadings.at_tau(0.0)
        np.testing.assert_array_equal(at_start, at_end)

    def test_time_dependent_mode_varies(self, scenario):
        loadings = worst_case_loadings(scenario)
        at_start, _ = loadings.at_tau(scenario.horizon)
        at_end, _ = loadings.at_tau(0.0)
        assert not np.allclose(at_start, at_end)

    def test_zero_without_ambiguity(self, scenario):
        calm = scenario.with_phi(0, 0.0, 0.0).with_phi(1, 0.0, 0.0)
        assert worst_case_loadings(calm).is_zero
        assert not worst_case_loadings(scenario).is_zero

    def test_incomplete_has_no_volatility_premium(self, short_scenario):
        complete = worst_case_loadings(short_scenario, regime=Regime.COMPLETE)
        incomplete = worst_case_loadings(
            short_scenario, regime=Regime.INCOMPLETE, reduction=ReductionMode.SINGLE_FACTOR_1
        )
        _, q_v_complete = complete.at_tau(0.0)
        _, q_v_incomplete = incomplete.at_tau(0.0)
        assert q_v_incomplete[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert q_v_complete[0, 0] != 0.0

    def test_incomplete_single_factor_drops_other(self, short_scenario):
        loadings = worst_case_loadings(
            short_scenario, regime=Regime.INCOMPLETE, reduction="single-factor-1"
        )
        q_s, q_v = loadings.at_tau(1.0)
        assert np.all(q_s[..., 1] == 0.0)
        assert np.all(q_v[..., 1] == 0.0)
        assert np.any(q_s[..., 0] != 0.0)

    def test_incomplete_needs_tradable_reduction(self, short_scenario):
        with pytest.raises(UnsupportedConfigurationError, match="single-factor"):
            worst_case_loadings(short_scenario, regime=Regime.INCOMPLETE)
        with pytest.raises(UnsupportedConfigurationError, match="per-factor"):
            worst_case_loadings(short_scenario, regime=Regime.INCOMPLETE, reduction="per-factor")


class TestCharacteristicFunction:
    """Tests for the characteristic-function coefficients."""

    @pytest.mark.parametrize("variant", [Variant.F1, Variant.F2])
    def test_unit_at_origin(self, one_year, variant):
        coeffs = char_fn(one_year, worst_case_loadings(one_year), 0.0, variant)
        assert abs(coeffs.value(0.04, 0.0001) - 1.0) < 1e-12

    def test_bounded(self, one_year):
        coeffs = char_fn(one_year, worst_case_loadings(one_year), 3.0)
        assert abs(coeffs.value(0.04, 0.0001)) <= 1.0 + 1e-12

    def test_step_halving(self, one_year):
        loadings = worst_case_loadings(one_year)
        coarse = char_fn(one_year, loadings, 1.0)
        fine = char_fn(one_year, loadings, 1.0, step=5e-4)
        assert abs(coarse.C1 - fine.C1) < 1e-8
        assert abs(coarse.D - fine.D) < 1e-8

    def test_exponent(self):
        assert Variant.F1.exponent(2.0) == 2j
        assert Variant.F2.exponent(2.0) == 1 + 2j


class TestDetectionError:
    """Tests for the Fourier detection-error probability."""

    def test_no_ambiguity_is_half(self, scenario):
        calm = scenario.with_phi(0, 0.0, 0.0).with_phi(1, 0.0, 0.0)
        result = detection_error(calm)
        assert result.epsilon == pytest.approx(0.5, abs=1e-8)

    def test_in_range(self, one_year):
        result = detection_error(one_year)
        assert 0.0 < result.epsilon < 0.5
        assert result.omega_max > 0
        assert result.nodes > 2

    def test_decreases_with_ambiguity(self, one_year):
        values = [
            detection_error(one_year.with_phi(0, phi_s=phi, phi_v=phi)).epsilon
            for phi in (0.25, 1.0, 2.0)
        ]
        assert values[0] >= values[1] - 1e-6
        assert values[1] >= values[2] - 1e-6

    def test_constant_mode(self, one_year):
        result = detection_error(one_year, mode="constant-at-t0")
        assert 0.0 < result.epsilon < 0.5

    def test_incomplete_regime(self, one_year):
        result = detection_error(
            one_year, regime=Regime.INCOMPLETE, reduction=ReductionMode.SINGLE_FACTOR_1
        )
        assert 0.0 < result.epsilon <= 0.5


class TestDetectionGrid:
    """Tests for detection-error grids."""

    def test_grid_rows(self, one_year):
        df = detection_error_grid(one_year, [0.0, 1.0], [0.0, 1.0], regimes=("complete",))
        assert list(df.columns) == GRID_COLUMNS
        assert len(df) == 4
        assert list(df["phi_s"]) == [0.0, 0.0, 1.0, 1.0]
        assert list(df["phi_v"]) == [0.0, 1.0, 0.0, 1.0]
        assert (df["status"] == "ok").all()
        assert df["epsilon"].iloc[0] == pytest.approx(0.5)

    def test_workers_do_not_change_results(self, one_year):
        serial = detection_error_grid(one_year, [0.5, 1.5], [1.0], regimes=("complete",))
        threaded = detection_error_grid(
            one_year, [0.5, 1.5], [1.0], regimes=("complete",), workers=2
        )
        np.testing.assert_array_equal(serial["epsilon"], threaded["epsilon"])

    def test_failed_cell_reported(self, one_year):
        with patch(
            "robustvol.core.detection.detection_error",
            side_effect=QuadratureError("tail not converged"),
        ):
            df = detection_error_grid(one_year, [1.0], [1.0], regimes=("complete",))
        assert math.isnan(df["epsilon"].iloc[0])
        assert df["status"].iloc[0].startswith("failed")

    def test_incomplete_cells_use_swept_factor(self, one_year):
        df = detection_error_grid(one_year, [1.0], [1.0], factor=1, regimes=("incomplete",))
        assert df["status"].iloc[0] == "ok"
        with patch("robustvol.core.detection.detection_error", wraps=detection_error) as solver:
            detection_error_grid(one_year, [1.0], [1.0], factor=1, regimes=("incomplete",))
        assert solver.call_args.kwargs["reduction"] is ReductionMode.SINGLE_FACTOR_2

    @pytest.mark.slow
    def test_monotone_on_full_grid(self, scenario):
        phis = np.linspace(0.0, 2.0, 21)
        df = detection_error_grid(scenario, phis, phis, regimes=("complete",), workers=4)
        surface = df["epsilon"].to_numpy().reshape(21, 21)
        assert np.all(np.diff(surface, axis=0) <= 1e-6)
        assert np.all(np.diff(surface, axis=1) <= 1e-6)


@pytest.mark.slow
class TestAgainstSimulation:
    """Fourier inversion against Monte Carlo likelihood ratios."""

    @pytest.mark.parametrize("phi", [0.5, 1.0, 2.0])
    def test_matches_monte_carlo(self, one_year, phi):
        cell = one_year.with_phi(0, phi_s=phi, phi_v=phi)
        fourier = detection_error(cell).epsilon
        spec = SimSpec(n_paths=100_000, dt=1 / 500, seed=7)
        simulated = mc_detection_error(cell, spec)
        assert abs(fourier - simulated.estimate) < 0.01
