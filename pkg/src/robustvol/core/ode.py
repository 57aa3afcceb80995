"""Fixed-step classical Runge-Kutta integration.

All value-function ODEs are posed in time-to-go ``tau = T - t`` so that the
terminal conditions of the HJB equations become initial conditions at
``tau = 0``. The engine works on real or complex numpy arrays of any shape.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicSpline

from robustvol.config import ODE_STEP
from robustvol.errors import BlowUpError

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e8

Rhs = Callable[[float, NDArray], NDArray]


@dataclass(frozen=True)
class OdeSolution:
    """
    Samples of an ODE solution on a strictly increasing tau grid.

    Attributes:
        tau: Grid, starting at 0
        values: Array with the grid along axis 0
        step: Largest RK4 step used between grid points
        error_estimate: Richardson estimate of the global error (NaN if not computed)
    """

    tau: NDArray[np.float64]
    values: NDArray
    step: float
    error_estimate: float = float("nan")
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def final(self) -> NDArray:
        return self.values[-1]

    def column(self, index: int) -> NDArray:
        return self.values[:, index]

    def spline(self, index: int) -> CubicSpline:
        if index not in self._splines:
            self._splines[index] = CubicSpline(self.tau, self.values[:, index])
        return self._splines[index]

    def __call__(self, tau, index: int):
        """Dense evaluation of one component by cubic-spline interpolation of the grid."""
        if np.isscalar(tau) and tau == 0.0:
            return self.values[0, index]
        return self.spline(index)(tau)


def rk4_step(rhs: Rhs, tau: float, y: NDArray, h: float) -> NDArray:
    k1 = rhs(tau, y)
    k2 = rhs(tau + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(tau + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(tau + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _march(rhs: Rhs, y0: NDArray, grid: NDArray, step: float, blowup: float) -> NDArray:
    values = np.empty((len(grid),) + y0.shape, dtype=y0.dtype)
    values[0] = y0
    y = y0
    for k in range(len(grid) - 1):
        tau, span = grid[k], grid[k + 1] - grid[k]
        n_sub = max(1, math.ceil(span / step - 1e-9))
        h = span / n_sub
        for i in range(n_sub):
            y = rk4_step(rhs, tau + i * h, y, h)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > blowup:
            raise BlowUpError(f"ODE solution left |y| <= {blowup:g} near tau={grid[k + 1]:.6g}")
        values[k + 1] = y
    return values


def uniform_grid(tau_end: float, step: float = ODE_STEP) -> NDArray[np.float64]:
    """Uniform grid on [0, tau_end] whose spacing does not exceed ``step``."""
    n = max(1, math.ceil(tau_end / step - 1e-9))
    return np.linspace(0.0, tau_end, n + 1)


def integrate(
    rhs: Rhs,
    y0,
    tau_grid: NDArray | None = None,
    *,
    tau_end: float | None = None,
    step: float = ODE_STEP,
    richardson: bool = True,
    blowup: float = BLOWUP_LIMIT,
) -> OdeSolution:
    """
    Integrate dy/dtau = rhs(tau, y) from tau = 0 with fixed-step RK4.

    Args:
        rhs: Right-hand side returning an array shaped like ``y``
        y0: Initial value at tau = 0 (scalar or array, real or complex)
        tau_grid: Output grid, starting at 0 and strictly increasing.
                  Defaults to a uniform grid of spacing ``step`` on [0, tau_end].
        tau_end: End of the default grid
        step: Maximum RK4 step between substeps, in years
        richardson: Also integrate with step 2h and report |y_h - y_2h| / 15
        blowup: Magnitude beyond which the solution is treated as exploding

    Returns:
        OdeSolution sampled on the grid

    Raises:
        BlowUpError: If the solution becomes non-finite or exceeds ``blowup``
        ValueError: If the grid does not start at 0 or is not increasing
    """
    if tau_grid is None:
        if tau_end is None:
            raise ValueError("either tau_grid or tau_end is required")
        tau_grid = uniform_grid(tau_end, step)
    grid = np.asarray(tau_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1 or grid[0] != 0.0:
        raise ValueError("tau_grid must be one-dimensional and start at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("tau_grid must be strictly increasing")

    y0 = np.asarray(y0)
    if not np.iscomplexobj(y0):
        y0 = y0.astype(float)
    values = _march(rhs, y0, grid, step, blowup)

    error = float("nan")
    if richardson and len(grid) > 1:
        # every other grid point with doubled step halves the substep count exactly
        index = np.arange(0, len(grid), 2)
        if index[-1] != len(grid) - 1:
            index = np.append(index, len(grid) - 1)
        coarse = _march(rhs, y0, grid[index], 2.0 * step, blowup)
        error = float(np.max(np.abs(values[index] - coarse))) / 15.0
        logger.debug(f"RK4 step={step:g}, Richardson error estimate={error:.3e}")
    return OdeSolution(tau=grid, values=values, step=step, error_estimate=error)


def central_derivative(values: NDArray, spacing: float) -> NDArray:
    """
    Five-point central difference along axis 0 of uniformly spaced samples.

    The first and last two samples are dropped.
    """
    return (
        values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]
    ) / (12.0 * spacing)
