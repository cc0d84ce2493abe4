import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DefaultConfig, __version__, overrides
from ..cost import CostSpec
from ..errors import (
    BudgetError,
    DegeneracyError,
    KLSensError,
    NumericRangeError,
    RegimeError,
    ValidationError,
)
from ..exact1d import expansion1d, solve_tilt, tabulate
from ..expansion import (
    DerivativeReport,
    SweepLine,
    derive_exact,
    loglog_slope,
    relative_impact,
    sweep,
    sweep_to_csv,
)
from ..fixedpoint import FixedPointSolution, calibrate_alpha
from ..model import FiniteDistribution, StochasticModel, discretize
from ..nestedmc import NestedDesign, benchmark_estimate, pilot, sectioned_zeta1
from ..oracle import brute_force
from ..queueing import QUEUE_TABLE_COLUMNS, QueueConfig, benchmark_table, table_to_csv
from .experiment import ExperimentConfig

logger = logging.getLogger("klsens")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_REGIME = 3
EXIT_BUDGET = 4

LOGGERS = ("klsens", "fixedpoint", "nestedmc")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, BudgetError):
        return EXIT_BUDGET
    if isinstance(exc, (DegeneracyError, NumericRangeError, RegimeError)):
        return EXIT_REGIME
    return EXIT_INPUT


def resolve_seed(flag: Optional[int], config_seed: Optional[int]) -> int:
    """--seed, then the experiment seed, then KLSENS_SEED, then 0."""
    if flag is not None:
        return flag
    if config_seed is not None:
        return config_seed
    env = os.environ.get("KLSENS_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"KLSENS_SEED must be an integer, got {env!r}") from exc
    return 0


def _plain(value: Any) -> Any:
    """JSON-ready copy: numpy scalars and arrays unpacked, non-finite floats as null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    return value


def dumps(value: Any) -> str:
    return json.dumps(_plain(value), indent=2, sort_keys=True, allow_nan=False)


def _emit(text: str, out_file: Optional[str]):
    if out_file is None:
        sys.stdout.write(text + "\n")
        return
    with open(out_file, "w", encoding="utf-8") as f:
        f.write(text + "\n")


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _design(args: argparse.Namespace, design: NestedDesign) -> NestedDesign:
    changes = {
        field: value
        for field, value in (("K", args.outer), ("n", args.inner), ("N", args.sections), ("confidence", args.confidence))
        if value is not None
    }
    return dataclasses.replace(design, **changes) if changes else design


def _threads(args: argparse.Namespace) -> int:
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        raise ValidationError(f"--threads must be at least 1, got {threads}")
    return threads


def _load(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        raise ValidationError("this command needs --config")
    experiment = ExperimentConfig.from_json(args.config)
    if args.eta is not None:
        experiment.eta = _floats(args.eta)
    if args.order is not None:
        experiment.order = args.order
    experiment.design = _design(args, experiment.design)
    experiment.__post_init__()
    return experiment


def _finite(model: StochasticModel, command: str) -> FiniteDistribution:
    if model.exact is None:
        raise ValidationError(f"{command} needs a finite model")
    return model.exact


def enumerable(model: StochasticModel, cost: CostSpec) -> bool:
    if model.exact is None or cost.auxiliary is not None:
        return False
    if cost.horizon.is_random:
        return True
    return len(model.exact) ** cost.T <= DefaultConfig.enumeration_budget


def analyze(
    experiment: ExperimentConfig, seed: int, threads: Optional[int] = None
) -> Tuple[DerivativeReport, SweepLine]:
    """
    Derivative report and sweep of one experiment: exact enumeration when the
    model is finite and the product space fits the budget, nested Monte Carlo
    otherwise. Monte Carlo draws the benchmark mean from stream 0 and section
    l from stream 1 + l.
    """
    cost = experiment.build_cost()
    model = experiment.model
    horizon_config = experiment.horizon_config()
    if enumerable(model, cost):
        assert model.exact is not None
        logger.info("running the exact pipeline")
        report = derive_exact(model.exact, cost, experiment.sense, horizon_config)  # type: ignore[arg-type]
    else:
        logger.info("running the nested Monte Carlo pipeline")
        design = experiment.design
        estimate = sectioned_zeta1(
            model, cost, design, seed, stream_offset=1, max_processes=threads, horizon_config=horizon_config
        )
        mean = benchmark_estimate(model, cost, experiment.samples, design.confidence, seed, stream=0)
        sign = -1.0 if experiment.sense == "min" else 1.0
        ci: Dict[str, Tuple[float, float]] = {"benchmark_mean": (mean.ci_low, mean.ci_high)}
        if estimate.ci_low is not None and estimate.ci_high is not None:
            ci["zeta1"] = (
                (estimate.ci_low, estimate.ci_high) if sign > 0 else (-estimate.ci_high, -estimate.ci_low)
            )
        report = DerivativeReport(
            benchmark_mean=mean.mean,
            zeta1=sign * estimate.point,
            zeta2=None,
            var_g=estimate.point**2 / 2.0,
            kappa3_g=None,
            nu=None,
            sense=experiment.sense,
            relative_impact=relative_impact(estimate.point, mean.mean),
            ci=ci,
            clamped=estimate.clamped,
        )
    return report, sweep(report, experiment.eta, experiment.order)


def cmd_analyze(args: argparse.Namespace) -> int:
    experiment = _load(args)
    seed = resolve_seed(args.seed, experiment.seed)
    with overrides(**experiment.runtime):
        report, line = analyze(experiment, seed, _threads(args))
    report_file = experiment.output.get("report")
    sweep_file = experiment.output.get("sweep")
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        report_file = os.path.join(args.out, "report.json")
        sweep_file = os.path.join(args.out, "sweep.csv")
    out = report.to_dict()
    out["seed"] = seed
    out["version"] = __version__
    _emit(dumps(out), report_file)
    if sweep_file is not None:
        sweep_to_csv(line, sweep_file)
        logger.info(f"wrote {len(line)} sweep rows to {sweep_file}")
    return EXIT_OK


def _single_values(experiment: ExperimentConfig) -> Tuple[FiniteDistribution, np.ndarray]:
    cost = experiment.build_cost()
    if cost.horizon.is_random or cost.T != 1:
        raise ValidationError("exact1d needs a single-draw cost")
    if cost.auxiliary is not None:
        raise ValidationError("exact1d needs a cost without auxiliary input")
    dist = experiment.model.exact or discretize(experiment.model)
    return dist, cost_values(dist, cost)


def cmd_exact1d(args: argparse.Namespace) -> int:
    experiment = _load(args)
    with overrides(**experiment.runtime):
        dist, values = _single_values(experiment)
        zeta1, zeta2 = expansion1d(dist, values)
        senses = ["max", "min"] if experiment.sense == "both" else [experiment.sense]
        solutions = []
        for eta in experiment.eta:
            for sense in senses:
                solution = solve_tilt(dist, values, eta, sense)  # type: ignore[arg-type]
                solutions.append({"eta": eta, **solution.to_dict()})
    out = {
        "mean": dist.expect(values),
        "zeta1": zeta1,
        "zeta2": zeta2,
        "solutions": solutions,
        "version": __version__,
    }
    _emit(dumps(out), args.out)
    return EXIT_OK


def _fixed_point(dist: FiniteDistribution, cost: CostSpec, eta: float, sense: str) -> FixedPointSolution:
    if sense == "min":
        solution = calibrate_alpha(dist, cost.negated(), eta)
        return dataclasses.replace(solution, objective=-solution.objective)
    return calibrate_alpha(dist, cost, eta)


def _senses(experiment: ExperimentConfig, command: str) -> str:
    if experiment.sense == "both":
        raise ValidationError(f"{command} takes sense 'max' or 'min'")
    return experiment.sense


def cmd_fixedpoint(args: argparse.Namespace) -> int:
    experiment = _load(args)
    sense = _senses(experiment, "fixedpoint")
    with overrides(**experiment.runtime):
        dist = _finite(experiment.model, "fixedpoint")
        cost = experiment.build_cost()
        rows = []
        for eta in experiment.eta:
            solution = _fixed_point(dist, cost, eta, sense)
            rows.append({"eta": eta, "sense": sense, **solution.to_dict()})
    _emit(dumps({"solutions": rows, "version": __version__}), args.out)
    return EXIT_OK


def oracle_compare(experiment: ExperimentConfig, seed: int) -> Dict[str, Any]:
    """
    Oracle, fixed-point and expansion values over the eta grid with their
    gaps, and the log-log slopes of the gaps against eta.
    """
    sense = _senses(experiment, "oracle-compare")
    dist = _finite(experiment.model, "oracle-compare")
    cost = experiment.build_cost()
    if cost.horizon.is_random:
        raise ValidationError("oracle-compare needs a fixed horizon")
    report = derive_exact(dist, cost, sense)  # type: ignore[arg-type]
    assert report.zeta2 is not None
    rows = []
    for eta in experiment.eta:
        warm = []
        if cost.T == 1:
            fixed: Optional[float] = solve_tilt(dist, cost_values(dist, cost), eta, sense).optimum  # type: ignore
        else:
            try:
                solution = _fixed_point(dist, cost, eta, sense)
                fixed = solution.objective
                warm.append(solution.L_star.weights)
            except RegimeError as exc:
                logger.warning(f"no fixed point at eta={eta}: {exc}")
                fixed = None
        oracle = brute_force(dist, cost, eta, sense, seed=seed, warm_starts=warm)  # type: ignore[arg-type]
        expansion = report.benchmark_mean + report.zeta1 * math.sqrt(eta) + report.zeta2 * eta
        rows.append(
            {
                "eta": eta,
                "oracle": oracle.optimum,
                "fixed_point": fixed,
                "expansion": expansion,
                "fixed_point_gap": None if fixed is None else oracle.optimum - fixed,
                "expansion_gap": oracle.optimum - expansion,
                "kl_at_opt": oracle.kl_at_opt,
            }
        )
    return {
        "sense": sense,
        "benchmark_mean": report.benchmark_mean,
        "zeta1": report.zeta1,
        "zeta2": report.zeta2,
        "rows": rows,
        "expansion_gap_slope": _gap_slope(rows, "expansion_gap"),
        "fixed_point_gap_slope": _gap_slope(rows, "fixed_point_gap"),
    }


def cost_values(dist: FiniteDistribution, cost: CostSpec) -> np.ndarray:
    return tabulate(dist, lambda x: cost.evaluate(np.array([x])))


def _gap_slope(rows: Sequence[Dict[str, Any]], key: str) -> Optional[float]:
    points = [(r["eta"], r[key]) for r in rows if r["eta"] > 0 and r[key] is not None and abs(r[key]) > 0]
    if len(points) < 2:
        return None
    return loglog_slope([p[0] for p in points], [p[1] for p in points])


def cmd_oracle_compare(args: argparse.Namespace) -> int:
    experiment = _load(args)
    seed = resolve_seed(args.seed, experiment.seed)
    with overrides(**experiment.runtime):
        out = oracle_compare(experiment, seed)
    out["version"] = __version__
    _emit(dumps(out), args.out)
    return EXIT_OK


def queue_configs(table: int, servers: Sequence[int], customers: int) -> List[QueueConfig]:
    if table == 1:
        return [QueueConfig.mms(s, customers=customers) for s in servers]
    return [QueueConfig.ggs(s, customers=customers) for s in servers]


def cmd_queue_table(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed, None)
    design = _design(args, NestedDesign())
    configs = queue_configs(args.table, _ints(args.servers), args.customers)
    table = benchmark_table(configs, args.samples, design, seed, _threads(args))
    table_to_csv(table, args.out if args.out is not None else sys.stdout, QUEUE_TABLE_COLUMNS)
    return EXIT_OK


def cmd_pilot(args: argparse.Namespace) -> int:
    experiment = _load(args)
    seed = resolve_seed(args.seed, experiment.seed)
    with overrides(**experiment.runtime):
        table = pilot(
            experiment.model,
            experiment.build_cost(),
            _ints(args.inner_grid),
            experiment.design,
            seed,
            _threads(args),
            experiment.horizon_config(),
        )
    table_to_csv(table, args.out if args.out is not None else sys.stdout)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise ValidationError(message)


def _common(parser: argparse.ArgumentParser, config: bool = True):
    if config:
        parser.add_argument("--config", type=str, help="Experiment JSON file.")
        parser.add_argument("--eta", type=str, help="Comma-separated eta grid, overriding the experiment.")
        parser.add_argument("--order", type=int, choices=[1, 2], help="Order of the sweep approximation.")
    parser.add_argument("--seed", type=int, help="Base seed (falls back to the experiment seed, then KLSENS_SEED).")
    parser.add_argument("--threads", type=int, help="Worker processes (default: available CPUs).")
    parser.add_argument("--outer", type=int, help="Outer samples K per section.")
    parser.add_argument("--inner", type=int, help="Inner samples n per outer sample.")
    parser.add_argument("--sections", type=int, help="Number of sections N.")
    parser.add_argument("--confidence", type=float, help="Confidence level of the intervals.")
    parser.add_argument("--out", type=str, help="Output file (a directory for analyze).")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level instead of INFO.")


COMMANDS: Dict[str, Tuple[Callable[[argparse.Namespace], int], str]] = {
    "analyze": (cmd_analyze, "Derivative report and eta sweep for an experiment."),
    "exact1d": (cmd_exact1d, "Exact single-draw worst case over the eta grid."),
    "fixedpoint": (cmd_fixedpoint, "Calibrated fixed-point worst case over the eta grid."),
    "oracle-compare": (cmd_oracle_compare, "Oracle, fixed point and expansion side by side."),
    "queue-table": (cmd_queue_table, "Multi-server queue sensitivity table."),
    "pilot": (cmd_pilot, "Sectioned estimates over a grid of inner sample sizes."),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="klsens", description="Nonparametric KL sensitivity analysis of stochastic models.")
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (func, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        _common(sub, config=name != "queue-table")
        if name == "queue-table":
            sub.add_argument("--table", type=int, choices=[1, 2], default=1, help="1: M/M/s, 2: G/G/s.")
            sub.add_argument("--servers", type=str, default="20,40,60,80,100", help="Comma-separated server counts.")
            sub.add_argument("--samples", type=int, default=10_000, help="Waiting-time samples per row.")
            sub.add_argument("--customers", type=int, default=100, help="Index of the customer whose wait is measured.")
        if name == "pilot":
            sub.add_argument("--inner-grid", type=str, default="5,10,20,40", help="Comma-separated inner sizes.")
        sub.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig()
        for name in LOGGERS:
            logging.getLogger(name).setLevel(logging.DEBUG if args.verbose else logging.INFO)
        return args.func(args)
    except KLSensError as exc:
        sys.stderr.write(json.dumps(_plain(exc.to_dict()), sort_keys=True) + "\n")
        return exit_code(exc)
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True) + "\n")
        return EXIT_INPUT
