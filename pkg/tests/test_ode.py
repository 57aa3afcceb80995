"""Tests for the fixed-step RK4 engine."""

import math

import numpy as np
import pytest

from robustvol.core.ode import central_derivative, integrate, rk4_step, uniform_grid
from robustvol.errors import BlowUpError


class TestIntegrate:
    """Tests for integrate()."""

    def test_linear_ode(self):
        solution = integrate(lambda tau, y: -y + 1.0, 0.0, tau_end=1.0)
        assert solution.final == pytest.approx(1.0 - math.exp(-1.0), abs=1e-8)

    def test_vector_state(self):
        solution = integrate(lambda tau, y: np.array([y[1], -y[0]]), [0.0, 1.0], tau_end=math.pi)
        assert solution.final[0] == pytest.approx(0.0, abs=1e-9)
        assert solution.final[1] == pytest.approx(-1.0, abs=1e-9)
        assert solution(math.pi / 2, 0) == pytest.approx(1.0, abs=1e-9)

    def test_complex_state(self):
        solution = integrate(lambda tau, y: 1j * y, 1.0 + 0j, tau_end=1.0)
        assert solution.final == pytest.approx(complex(math.cos(1.0), math.sin(1.0)), abs=1e-9)

    def test_time_dependent_rhs_on_custom_grid(self):
        grid = np.array([0.0, 0.25, 1.0, 3.0])
        solution = integrate(lambda tau, y: 2.0 * tau, 0.0, grid, step=1e-2)
        np.testing.assert_allclose(solution.values, grid**2, atol=1e-12)

    def test_richardson_estimate_is_small(self):
        solution = integrate(lambda tau, y: -3.0 * y, 1.0, tau_end=1.0, step=1e-2)
        assert 0.0 < solution.error_estimate < 1e-8

    def test_richardson_can_be_skipped(self):
        solution = integrate(lambda tau, y: -y, 1.0, tau_end=1.0, richardson=False)
        assert math.isnan(solution.error_estimate)

    def test_blow_up_detected(self):
        # tan(tau) has a pole at pi / 2
        with pytest.raises(BlowUpError):
            integrate(lambda tau, y: y * y + 1.0, 0.0, tau_end=2.0)

    def test_blow_up_is_arithmetic_error(self):
        with pytest.raises(ArithmeticError):
            integrate(lambda tau, y: y * y + 1.0, 0.0, tau_end=2.0)

    def test_grid_must_start_at_zero(self):
        with pytest.raises(ValueError, match="start at 0"):
            integrate(lambda tau, y: y, 1.0, np.array([0.5, 1.0]))

    def test_grid_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            integrate(lambda tau, y: y, 1.0, np.array([0.0, 1.0, 1.0]))

    def test_needs_grid_or_end(self):
        with pytest.raises(ValueError):
            integrate(lambda tau, y: y, 1.0)


class TestHelpers:
    """Tests for grid and derivative helpers."""

    def test_uniform_grid_spacing(self):
        grid = uniform_grid(10.0, 1e-3)
        assert len(grid) == 10_001
        assert grid[-1] == 10.0
        assert np.diff(grid).max() <= 1e-3 + 1e-15

    def test_uniform_grid_rounds_up(self):
        grid = uniform_grid(1.0, 0.3)
        assert len(grid) == 5

    def test_rk4_step_exact_for_cubic(self):
        y = rk4_step(lambda tau, y: 3.0 * tau**2, 0.0, np.array(0.0), 0.5)
        assert float(y) == pytest.approx(0.125, abs=1e-15)

    def test_central_derivative(self):
        x = np.linspace(0.0, 1.0, 101)
        derivative = central_derivative(np.sin(x), x[1] - x[0])
        np.testing.assert_allclose(derivative, np.cos(x[2:-2]), atol=1e-8)
