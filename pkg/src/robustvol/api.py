"""Programmatic API: one function per CLI verb, each returning a DataFrame."""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import pandas as pd

from robustvol import __version__
from robustvol.config import WORKERS
from robustvol.core.correlated import (
    approx_controls,
    solve_affine_system,
    sqrt_mean_kummer,
)
from robustvol.core.detection import LoadingMode, detection_error, detection_error_grid
from robustvol.core.model import (
    ScenarioConfig,
    load_scenario,
    novikov_margin,
    scenario_hash,
    validate_feller,
    with_parameters,
)
from robustvol.core.output_formats import detect_format_from_filename, write_dataframe
from robustvol.core.riccati import ReductionMode, Regime, value_coefficients
from robustvol.core.sim import REPORT_COLUMNS, Measure, SimSpec, mc_detection_error, mc_objective
from robustvol.core.strategy import (
    Exposures,
    exposures_to_weights,
    incomplete_exposures,
    jump_exposures,
    jump_worst_case,
    load_greeks,
    optimal_exposures_complete,
    worst_case_complete,
    worst_case_incomplete,
)
from robustvol.core.welfare import LOSS_COLUMNS, Evaluation, Strategy, utility_loss
from robustvol.errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

EXPOSURE_COLUMNS = ["tau", "beta_s1", "beta_s2", "beta_v1", "beta_v2"]
SWEEP_QUANTITIES = (
    "detection",
    "beta_s1",
    "beta_s2",
    "beta_v1",
    "beta_v2",
    "es2",
    "ev2",
    "loss",
)


def _scenario(scenario: ScenarioConfig | str | Path) -> ScenarioConfig:
    if isinstance(scenario, ScenarioConfig):
        return scenario
    return load_scenario(scenario)


def save(df: pd.DataFrame, output_path: str | Path, scenario: ScenarioConfig) -> Path:
    """Write a result table, format inferred from the extension, with provenance for CSV."""
    output_path = Path(output_path)
    output_format = detect_format_from_filename(str(output_path))
    if output_format is None:
        raise ConfigurationError(
            f"Cannot infer format from '{output_path}'. "
            "Use extension: .csv, .json, .parquet, or .xlsx"
        )
    metadata = {"scenario": scenario_hash(scenario)[:16], "version": __version__}
    path = write_dataframe(df, output_path, output_format, metadata=metadata)
    logger.info(f"Saved to {path}")
    return path


def _finish(df: pd.DataFrame, scenario: ScenarioConfig, output_path) -> pd.DataFrame:
    if output_path is not None:
        save(df, output_path, scenario)
    return df


def validate(
    scenario: ScenarioConfig | str | Path, *, output_path: str | Path | None = None
) -> pd.DataFrame:
    """
    Feller and Novikov checks per factor.

    Examples:
        >>> validate("reference.yaml")  # factor 1 fails Feller: 2*3*0.01 < 0.25**2
    """
    scenario = _scenario(scenario)
    rows = []
    for j, factor in enumerate(scenario.factors):
        lhs = 2.0 * factor.kappa * factor.theta
        rows.append(
            {
                "check": "feller",
                "factor": j + 1,
                "lhs": lhs,
                "rhs": factor.sigma_v**2,
                "passed": validate_feller(factor),
            }
        )
    for j, (lhs, rhs) in enumerate(novikov_margin(scenario)):
        rows.append(
            {"check": "novikov", "factor": j + 1, "lhs": lhs, "rhs": rhs, "passed": lhs <= rhs}
        )
    return _finish(pd.DataFrame(rows), scenario, output_path)


def _optimal_exposures(scenario: ScenarioConfig, regime: Regime, tau: float, values) -> Exposures:
    if regime is Regime.COMPLETE:
        return optimal_exposures_complete(scenario, tau)
    if regime is Regime.JUMP:
        return jump_exposures(scenario, tau)
    if regime is Regime.INCOMPLETE:
        return incomplete_exposures(scenario, values, tau)
    raise ConfigurationError(f"no optimal exposures for regime {regime}")


def _exposure_row(tau: float, exposure: Exposures) -> dict:
    row = dict(zip(EXPOSURE_COLUMNS, [tau, *exposure.beta_s, *exposure.beta_v], strict=True))
    if exposure.beta_n is not None:
        row["beta_n"] = exposure.beta_n
    return row


def _default_regime(scenario: ScenarioConfig, regime) -> Regime:
    if regime is not None:
        return Regime(regime)
    return Regime.JUMP if scenario.has_jumps else Regime.COMPLETE


def exposures(
    scenario: ScenarioConfig | str | Path,
    taus: Sequence[float],
    *,
    regime: Regime | str | None = None,
    reduction: ReductionMode | str | None = None,
    greeks: str | Path | None = None,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """
    Optimal exposures at each time-to-go, optionally translated into portfolio weights.

    Args:
        scenario: Scenario or path to a scenario document
        taus: Times to go, in years
        regime: complete, incomplete or jump (default from the scenario)
        reduction: Incomplete-market reduction; distinct factors need
            single-factor-1 or single-factor-2
        greeks: Greeks CSV; adds pi_s, one pi_<option> per option and cash
        output_path: Optional file to save the table to
    """
    scenario = _scenario(scenario)
    regime = _default_regime(scenario, regime)
    values = (
        value_coefficients(scenario, regime, reduction) if regime is Regime.INCOMPLETE else None
    )
    schedule = [
        (float(tau), _optimal_exposures(scenario, regime, float(tau), values)) for tau in taus
    ]
    rows = [_exposure_row(tau, exposure) for tau, exposure in schedule]
    if greeks is not None:
        table = load_greeks(greeks)
        for row, (_, exposure) in zip(rows, schedule, strict=True):
            weights = exposures_to_weights(exposure, table, scenario)
            row["pi_s"] = weights.pi_s
            for name, pi in zip(table.names, weights.pi_o, strict=True):
                row[f"pi_{name}"] = pi
            row["cash"] = weights.cash
    return _finish(pd.DataFrame(rows), scenario, output_path)


def worst_case(
    scenario: ScenarioConfig | str | Path,
    taus: Sequence[float],
    *,
    state: tuple[float, float] | None = None,
    regime: Regime | str | None = None,
    reduction: ReductionMode | str | None = None,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """Worst-case distortions e^S_j, e^V_j (and e / sqrt(v)) along tau at a fixed state."""
    scenario = _scenario(scenario)
    regime = _default_regime(scenario, regime)
    v1, v2 = state if state is not None else scenario.initial_variances
    rows = []
    for tau in taus:
        tau = float(tau)
        if regime is Regime.COMPLETE:
            wc = worst_case_complete(scenario, tau, v1, v2)
        elif regime is Regime.JUMP:
            wc = jump_worst_case(scenario, tau, v1, v2)
        elif regime is Regime.INCOMPLETE:
            wc = worst_case_incomplete(scenario, tau, v1, v2, reduction)
        else:
            raise ConfigurationError(f"no worst case for regime {regime}")
        row = {"tau": tau, "v1": v1, "v2": v2}
        for j, v in enumerate((v1, v2)):
            row[f"es{j + 1}"] = wc.e_s[j]
            row[f"ev{j + 1}"] = wc.e_v[j]
            root = math.sqrt(v)
            row[f"qs{j + 1}"] = wc.e_s[j] / root if root > 0 else math.nan
            row[f"qv{j + 1}"] = wc.e_v[j] / root if root > 0 else math.nan
        rows.append(row)
    return _finish(pd.DataFrame(rows), scenario, output_path)


def loss(
    scenario: ScenarioConfig | str | Path,
    strategies: Sequence[Strategy | str] | None = None,
    *,
    t: float = 0.0,
    state: tuple[float, float] | None = None,
    evaluation: Evaluation | str = Evaluation.ADVERSARIAL,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """Wealth-equivalent utility losses; defaults to every strategy the scenario supports."""
    scenario = _scenario(scenario)
    if strategies is None:
        strategies = (
            [Strategy.JUMP_IGNORE]
            if scenario.has_jumps
            else [Strategy.PI1, Strategy.PI2, Strategy.PI3]
        )
    rows = [
        utility_loss(scenario, s, t=t, state=state, evaluation=evaluation).as_row()
        for s in strategies
    ]
    return _finish(pd.DataFrame(rows, columns=LOSS_COLUMNS), scenario, output_path)


def detect(
    scenario: ScenarioConfig | str | Path,
    *,
    phi_s_values: Sequence[float] | None = None,
    phi_v_values: Sequence[float] | None = None,
    factor: int = 0,
    regimes: Sequence[Regime | str] = (Regime.COMPLETE,),
    mode: LoadingMode | str = LoadingMode.TIME_DEPENDENT,
    reduction: ReductionMode | str | None = None,
    workers: int = WORKERS,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """
    Detection-error probabilities at the scenario's own ambiguity, or over a grid
    of one factor's (phi^S, phi^V) when grid values are given.

    ``reduction`` applies to incomplete-regime rows at the scenario; grid rows
    use the swept factor's single-factor reduction.
    """
    scenario = _scenario(scenario)
    if phi_s_values is None and phi_v_values is None:
        rows = []
        for regime in regimes:
            result = detection_error(scenario, mode=mode, regime=regime, reduction=reduction)
            rows.append(
                {
                    "regime": str(Regime(regime)),
                    "epsilon": result.epsilon,
                    "clamped": result.clamped,
                    "omega_max_used": result.omega_max,
                }
            )
        return _finish(pd.DataFrame(rows), scenario, output_path)
    j = factor
    phi_s_values = phi_s_values if phi_s_values is not None else [scenario.prefs.phi_s[j]]
    phi_v_values = phi_v_values if phi_v_values is not None else [scenario.prefs.phi_v[j]]
    df = detection_error_grid(
        scenario,
        phi_s_values,
        phi_v_values,
        factor=factor,
        regimes=tuple(regimes),
        mode=mode,
        workers=workers,
    )
    return _finish(df, scenario, output_path)


def correlated(
    scenario: ScenarioConfig | str | Path,
    taus: Sequence[float],
    *,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """
    Coefficients and approximate exposures of the correlated-factor model along tau,
    evaluated at the mean sqrt-variance state E[sqrt(V_j(t))].
    """
    scenario = _scenario(scenario)
    affine = solve_affine_system(scenario)
    rows = []
    for tau in taus:
        tau = float(tau)
        t = scenario.horizon - tau
        if t > 0:
            u = [float(sqrt_mean_kummer(f, t)) for f in scenario.factors]
        else:
            u = [math.sqrt(f.v0) for f in scenario.factors]
        exposure, wc = approx_controls(scenario, affine, t, u[0], u[1])
        rows.append(
            {
                "tau": tau,
                "u1": u[0],
                "u2": u[1],
                "HV1": float(affine.H_v(0, tau)),
                "HV2": float(affine.H_v(1, tau)),
                "HU1": float(affine.H_u(0, tau)),
                "HU2": float(affine.H_u(1, tau)),
                "HY": float(affine.H_y(tau)),
                "h": float(affine.h_hat(tau)),
                "beta_s1": exposure.beta_s[0],
                "beta_s2": exposure.beta_s[1],
                "beta_v1": exposure.beta_v[0],
                "beta_v2": exposure.beta_v[1],
                "es1": wc.e_s[0],
                "es2": wc.e_s[1],
                "ev1": wc.e_v[0],
                "ev2": wc.e_v[1],
            }
        )
    return _finish(pd.DataFrame(rows), scenario, output_path)


def simulate(
    scenario: ScenarioConfig | str | Path,
    quantities: Sequence[str] = ("objective", "detection_error"),
    *,
    spec: SimSpec | None = None,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """
    Monte Carlo estimates as a report table ``quantity,estimate,stderr,n_paths,dt,seed,scheme``.

    ``objective`` also adds a ``closed_form`` row with the value J(0, 1, v0).
    """
    scenario = _scenario(scenario)
    spec = spec or SimSpec()
    rows = []
    for quantity in quantities:
        if quantity == "objective":
            report = mc_objective(
                scenario, Regime.COMPLETE, replace(spec, measure=Measure.WORST_CASE)
            )
            rows.append(report.as_row())
            values = value_coefficients(scenario, Regime.COMPLETE)
            one_g = 1.0 - scenario.gamma
            exact = math.exp(float(values.exponent(scenario.horizon, *scenario.initial_variances)))
            closed_form = {"quantity": "closed_form", "estimate": exact / one_g, "stderr": 0.0}
            rows.append({**report.as_row(), **closed_form})
        elif quantity == "detection_error":
            rows.append(mc_detection_error(scenario, spec).as_row())
        else:
            raise ConfigurationError(f"unknown simulated quantity '{quantity}'")
    return _finish(pd.DataFrame(rows, columns=REPORT_COLUMNS), scenario, output_path)


def _sweep_value(scenario: ScenarioConfig, quantity: str, strategy, mode) -> float:
    if quantity == "detection":
        return detection_error(scenario, mode=mode).epsilon
    if quantity.startswith("beta_"):
        regime = _default_regime(scenario, None)
        exposure = _optimal_exposures(scenario, regime, scenario.horizon, None)
        row = _exposure_row(scenario.horizon, exposure)
        return row[quantity]
    if quantity in ("es2", "ev2"):
        # scaled distortions e / sqrt(v) do not depend on the variance level
        wc = worst_case_complete(scenario, scenario.horizon, 1.0, 1.0)
        return wc.e_s[1] if quantity == "es2" else wc.e_v[1]
    if quantity == "loss":
        return utility_loss(scenario, strategy).loss
    raise ConfigurationError(
        f"unknown sweep quantity '{quantity}'; choose from {', '.join(SWEEP_QUANTITIES)}"
    )


def _cell_scenarios(scenario: ScenarioConfig, name_a: str, name_b: str, cells) -> dict:
    """Build every cell's scenario first so an invalid grid fails before any numerics."""
    built, invalid = {}, []
    for a, b in cells:
        try:
            built[(a, b)] = with_parameters(scenario, **{name_a: a, name_b: b})
        except ConfigurationError as e:
            invalid.append(f"{name_a}={a:g}, {name_b}={b:g}: {e}")
    if invalid:
        raise ConfigurationError(
            f"{len(invalid)} of {len(cells)} sweep cells are invalid; first: {invalid[0]}"
        )
    return built


def sweep(
    scenario: ScenarioConfig | str | Path,
    grid: dict[str, Sequence[float]],
    quantity: str,
    *,
    strategy: Strategy | str = Strategy.PI3,
    mode: LoadingMode | str = LoadingMode.TIME_DEPENDENT,
    workers: int = WORKERS,
    output_path: str | Path | None = None,
) -> pd.DataFrame:
    """
    Evaluate a quantity over the product grid of two scalar scenario parameters.

    Args:
        scenario: Base scenario
        grid: Two parameter names (e.g. ``phi_s1``, ``phi_v1``) mapped to their values
        quantity: One of SWEEP_QUANTITIES
        strategy: Strategy scored when quantity is ``loss``
        mode: Loading mode when quantity is ``detection``
        workers: Threads for cell evaluation; row order is always grid order

    Returns:
        DataFrame with one column per parameter, the quantity and a status column

    Raises:
        ConfigurationError: If any cell gives an invalid scenario (e.g. gamma <= 1);
            checked for the whole grid before any cell is evaluated
    """
    scenario = _scenario(scenario)
    if len(grid) != 2:
        raise ConfigurationError(f"sweep needs exactly two parameters, got {list(grid)}")
    if quantity not in SWEEP_QUANTITIES:
        raise ConfigurationError(
            f"unknown sweep quantity '{quantity}'; choose from {', '.join(SWEEP_QUANTITIES)}"
        )
    (name_a, values_a), (name_b, values_b) = grid.items()
    cells = [(float(a), float(b)) for a in values_a for b in values_b]
    cell_scenarios = _cell_scenarios(scenario, name_a, name_b, cells)
    logger.info(f"Sweep of {quantity} over {len(cells)} cells ({name_a} x {name_b})")

    def evaluate(cell):
        a, b = cell
        row = {name_a: a, name_b: b}
        try:
            row[quantity] = _sweep_value(cell_scenarios[cell], quantity, strategy, mode)
            row["status"] = "ok"
        except NumericalError as e:
            logger.warning(f"Sweep cell {row} failed: {e}")
            row[quantity] = math.nan
            row["status"] = f"failed: {e}"
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, cells))
    else:
        rows = [evaluate(cell) for cell in cells]
    df = pd.DataFrame(rows, columns=[name_a, name_b, quantity, "status"])
    logger.info(f"Sweep finished: {int((df['status'] == 'ok').sum())}/{len(df)} cells ok")
    return _finish(df, scenario, output_path)
