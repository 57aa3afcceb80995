"""Command-line front end.

Usage:
    robustvol validate [SCENARIO]
    robustvol exposures [SCENARIO] --tau 10 5 0 [--greeks greeks.csv]
    robustvol detect [SCENARIO] --phi-s 0..2:21 --phi-v 0..2:21
    robustvol sweep [SCENARIO] --grid phi_s1:0..2:21,phi_v1:0..2:21 --quantity detection

Every verb writes one table (CSV by default) plus a ``<stem>_plot.py`` script
for CSV outputs. Exit codes: 0 success, 1 configuration or usage error,
2 numerical failure.
"""

import argparse
import logging
import sys
from importlib.resources import files
from pathlib import Path

import numpy as np
import pandas as pd

from robustvol import api
from robustvol.config import MC_DT, MC_PATHS, MC_SEED, OUTPUT_DIR, WORKERS
from robustvol.core.detection import LoadingMode
from robustvol.core.model import load_scenario
from robustvol.core.plots import PlotKind, write_plot_script
from robustvol.core.riccati import ReductionMode, Regime
from robustvol.core.sim import Scheme, SimSpec
from robustvol.core.welfare import Evaluation, Strategy
from robustvol.errors import ConfigurationError, NumericalError
from robustvol.utils.logging import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

MODES = [m.value for m in LoadingMode]
REDUCTIONS = [r.value for r in ReductionMode if r is not ReductionMode.PER_FACTOR]
REDUCTION_HELP = "Incomplete-market reduction; two distinct factors need a single-factor one"


class UsageError(Exception):
    """Raised instead of argparse's own exit so usage problems map to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def default_scenario() -> Path:
    """Path of the packaged reference scenario."""
    return Path(str(files("robustvol") / "data" / "reference.yaml"))


def parse_values(text: str) -> list[float]:
    """
    Parse ``start..stop:count`` into an inclusive linspace, or a single number.

    Examples:
        >>> parse_values("0..2:5")
        [0.0, 0.5, 1.0, 1.5, 2.0]
        >>> parse_values("0.7")
        [0.7]
    """
    try:
        if ".." in text:
            span, _, count = text.partition(":")
            start, stop = span.split("..")
            n = int(count) if count else 11
            if n < 1:
                raise ValueError("count must be >= 1")
            return [float(x) for x in np.linspace(float(start), float(stop), n)]
        return [float(text)]
    except ValueError as e:
        raise ConfigurationError(f"cannot parse value range '{text}': {e}") from e


def parse_grid(text: str) -> dict[str, list[float]]:
    """Parse ``name:start..stop:count,name:...`` into an ordered parameter grid."""
    grid = {}
    for item in text.split(","):
        name, sep, spec = item.strip().partition(":")
        if not sep or not name:
            raise ConfigurationError(f"grid entry '{item}' must look like name:start..stop:count")
        grid[name] = parse_values(spec)
    return grid


def _output_path(args, verb: str) -> Path:
    output = Path(args.output) if args.output else Path(f"{verb.replace('-', '_')}.csv")
    if output.parent == Path("."):
        output = Path(OUTPUT_DIR) / output
    output.parent.mkdir(parents=True, exist_ok=True)
    return output


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument(
        "scenario", nargs="?", help="Scenario YAML document (default: packaged reference.yaml)"
    )
    common.add_argument("-o", "--output", help="Output table (.csv, .json, .parquet, .xlsx)")
    common.add_argument("--log-level", help="Logging level (default ROBUSTVOL_LOG_LEVEL)")

    parser = _Parser(prog="robustvol", description="Robust two-factor volatility portfolios")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    verbs.add_parser("validate", parents=[common], help="Feller and Novikov checks")

    p = verbs.add_parser("exposures", parents=[common], help="Optimal exposures along tau")
    p.add_argument("--tau", type=float, nargs="+", help="Times to go (default: horizon)")
    p.add_argument("--regime", choices=["complete", "incomplete", "jump"])
    p.add_argument("--reduction", choices=REDUCTIONS, help=REDUCTION_HELP)
    p.add_argument("--greeks", help="Greeks CSV; adds portfolio weights")

    p = verbs.add_parser("worst-case", parents=[common], help="Worst-case distortions")
    p.add_argument("--tau", type=float, nargs="+")
    p.add_argument("--state", type=float, nargs=2, metavar=("V1", "V2"))
    p.add_argument("--regime", choices=["complete", "incomplete", "jump"])
    p.add_argument("--reduction", choices=REDUCTIONS, help=REDUCTION_HELP)

    p = verbs.add_parser("loss", parents=[common], help="Wealth-equivalent utility losses")
    p.add_argument("--strategy", nargs="+", choices=[s.value for s in Strategy])
    p.add_argument(
        "--evaluation",
        choices=[e.value for e in Evaluation],
        default=Evaluation.ADVERSARIAL,
        help=(
            "adversarial (default) keeps the true phi when solving a strategy's value, so nature "
            "still distorts the factor it ignores; this departs from the literal reading, which "
            "zeroes that phi in the value equations too"
        ),
    )

    p = verbs.add_parser("detect", parents=[common], help="Detection-error probabilities")
    p.add_argument("--phi-s", help="phi^S values for the chosen factor, e.g. 0..2:21")
    p.add_argument("--phi-v", help="phi^V values for the chosen factor")
    p.add_argument("--factor", type=int, choices=[1, 2], default=1)
    p.add_argument("--regime", nargs="+", choices=["complete", "incomplete"], default=["complete"])
    p.add_argument("--mode", choices=MODES, default=LoadingMode.TIME_DEPENDENT)
    p.add_argument("--reduction", choices=REDUCTIONS, help=REDUCTION_HELP)
    p.add_argument("--workers", type=int, default=WORKERS)

    p = verbs.add_parser("correlated", parents=[common], help="Correlated-factor approximation")
    p.add_argument("--tau", type=float, nargs="+")

    p = verbs.add_parser("simulate", parents=[common], help="Monte Carlo cross-checks")
    p.add_argument(
        "--quantity",
        nargs="+",
        choices=["objective", "detection_error"],
        default=["objective", "detection_error"],
    )
    p.add_argument("--paths", type=int, default=MC_PATHS)
    p.add_argument("--dt", type=float, default=MC_DT)
    p.add_argument("--seed", type=int, default=MC_SEED)
    p.add_argument("--antithetic", action="store_true")
    p.add_argument("--workers", type=int, default=WORKERS)

    p = verbs.add_parser("sweep", parents=[common], help="Two-parameter grid sweep")
    p.add_argument("--grid", required=True, help="e.g. phi_s1:0..2:21,phi_v1:0..2:21")
    p.add_argument("--quantity", required=True, choices=list(api.SWEEP_QUANTITIES))
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.PI3)
    p.add_argument("--mode", choices=MODES, default=LoadingMode.TIME_DEPENDENT)
    p.add_argument("--workers", type=int, default=WORKERS)
    return parser


def _taus(args, scenario) -> list[float]:
    return args.tau if args.tau else [scenario.horizon]


def _dispatch(args, scenario, output: Path) -> tuple[pd.DataFrame, dict]:
    """Run one verb, returning its table and the plot-script options."""
    verb = args.verb
    if verb == "validate":
        df = api.validate(scenario, output_path=output)
        return df, {"kind": PlotKind.BAR, "label": "check", "value": "lhs"}
    if verb == "exposures":
        df = api.exposures(
            scenario,
            _taus(args, scenario),
            regime=args.regime,
            reduction=args.reduction,
            greeks=args.greeks,
            output_path=output,
        )
        return df, {"kind": PlotKind.CURVE}
    if verb == "worst-case":
        df = api.worst_case(
            scenario,
            _taus(args, scenario),
            state=args.state,
            regime=args.regime,
            reduction=args.reduction,
            output_path=output,
        )
        return df, {"kind": PlotKind.CURVE}
    if verb == "loss":
        df = api.loss(scenario, args.strategy, evaluation=args.evaluation, output_path=output)
        return df, {"kind": PlotKind.BAR, "label": "strategy", "value": "loss"}
    if verb == "detect":
        grid = args.phi_s is not None or args.phi_v is not None
        df = api.detect(
            scenario,
            phi_s_values=parse_values(args.phi_s) if args.phi_s else None,
            phi_v_values=parse_values(args.phi_v) if args.phi_v else None,
            factor=args.factor - 1,
            regimes=tuple(Regime(r) for r in args.regime),
            mode=args.mode,
            reduction=args.reduction,
            workers=args.workers,
            output_path=output,
        )
        if grid:
            return df, {"kind": PlotKind.SURFACE, "value": "epsilon"}
        return df, {"kind": PlotKind.BAR, "label": "regime", "value": "epsilon"}
    if verb == "correlated":
        df = api.correlated(scenario, _taus(args, scenario), output_path=output)
        return df, {"kind": PlotKind.CURVE}
    if verb == "simulate":
        spec = SimSpec(
            n_paths=args.paths,
            dt=args.dt,
            seed=args.seed,
            scheme=Scheme.FULL_TRUNCATION,
            antithetic=args.antithetic,
            workers=args.workers,
        )
        df = api.simulate(scenario, args.quantity, spec=spec, output_path=output)
        return df, {"kind": PlotKind.TABLE}
    if verb == "sweep":
        df = api.sweep(
            scenario,
            parse_grid(args.grid),
            args.quantity,
            strategy=args.strategy,
            mode=args.mode,
            workers=args.workers,
            output_path=output,
        )
        return df, {"kind": PlotKind.SURFACE, "value": args.quantity}
    raise ConfigurationError(f"unknown verb '{verb}'")


def run(argv: list[str] | None = None) -> int:
    """
    Parse arguments, run one verb and write its outputs.

    Returns:
        Exit code: 0 success, 1 configuration or usage error, 2 numerical failure
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"robustvol: error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(args.log_level)
    try:
        scenario = load_scenario(args.scenario or default_scenario())
        output = _output_path(args, args.verb)
        df, plot = _dispatch(args, scenario, output)
        if output.suffix.lower() == ".csv":
            write_plot_script(output, **plot)
        logger.info(f"{args.verb}: {len(df)} rows written to {output}")
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    return EXIT_OK


def main():
    """Console entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
