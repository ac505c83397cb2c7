"""Command-line entry point: `edgent <subcommand>` (run as `python -m src`)."""

import argparse
import asyncio
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional, Sequence

from .BranchyModel import load_model
from .DeviceAgent import DeviceAgent
from .EdgeAgent import serve_edge
from .LatencyPredictor import Side, load_predictors, save_predictors
from .Logger import get_logger
from .Planner import PlanRequest, forced_plan, plan
from .Profiler import default_suite, fit_from_csv, profile_suite, small_suite
from .Reports import (
    CompareReport,
    DeviceReport,
    FitReport,
    PlanReport,
    ProfileReport,
    RegressionDoc,
    Report,
    SimulatePointDoc,
    SimulateReport,
    SweepReport,
    SweepRowDoc
)
from .Settings import (
    DEFAULT_BANDWIDTH_KBPS,
    AgentConfig,
    GlobalConfig,
    default_model_path,
    default_predictors_path,
    parse_endpoint,
    resolve_seed
)
from .Simulator import ScenarioConfig, SweepSpec, compare_methods, linear_grid, simulate_edge_only, simulate_plan, sweep
from .exceptions import BaseProjectException

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE = 2

# Input size solved from the two published edge-only (bandwidth, latency) points
EDGE_ONLY_INPUT_BYTES = 14419


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1), got {text}")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", type=Path, default=None, help="Branchy model JSON (default: bundled AlexNet)")
    parser.add_argument("--predictors", type=Path, default=None, help="Predictor JSON (default: bundled coefficients)")
    parser.add_argument("--include-loading", action="store_true", help="Add model-loading latency terms")
    parser.add_argument("--count-result-transfer", action="store_true", help="Charge sending the final output back")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgent", description="Device-edge co-inference planning toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More console logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only warnings and errors on the console")
    parser.add_argument("--format", dest="output_format", choices=["table", "json", "csv"], default="table")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every randomized path (env: EDGENT_SEED)")
    commands = parser.add_subparsers(dest="command", required=True, metavar="<command>")

    profile = commands.add_parser("profile", help="Microbenchmark the reference kernels into a measurement CSV")
    profile.add_argument("--out", type=Path, required=True)
    profile.add_argument("--suite", choices=["default", "small"], default="default")
    profile.add_argument("--slowdown", type=_positive_float, default=1.0)

    fit = commands.add_parser("fit", help="Fit one side's regressions from a measurement CSV")
    fit.add_argument("--measurements", type=Path, required=True)
    fit.add_argument("--side", choices=[side.value for side in Side], required=True)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--merge", type=Path, default=None, help="Existing predictor file supplying the other side")

    plan_cmd = commands.add_parser("plan", help="Select exit and partition for a bandwidth and latency budget")
    _add_model_flags(plan_cmd)
    plan_cmd.add_argument("--bandwidth-kbps", type=_positive_float, required=True)
    plan_cmd.add_argument("--latency-ms", type=_positive_float, required=True)
    plan_cmd.add_argument("--json", dest="output_format", action="store_const", const="json", default=argparse.SUPPRESS)
    plan_cmd.add_argument("--table", dest="output_format", action="store_const", const="table", default=argparse.SUPPRESS)

    sweep_cmd = commands.add_parser("sweep", help="Plan along a bandwidth or budget grid")
    _add_model_flags(sweep_cmd)
    sweep_cmd.add_argument("--axis", choices=["bandwidth", "budget"], required=True)
    sweep_cmd.add_argument("--from", dest="start", type=_positive_float, required=True)
    sweep_cmd.add_argument("--to", dest="stop", type=_positive_float, required=True)
    sweep_cmd.add_argument("--steps", type=int, default=10)
    sweep_cmd.add_argument("--budget-ms", type=_positive_float, default=1000.0, help="Fixed budget for a bandwidth sweep")
    sweep_cmd.add_argument("--bandwidth-kbps", type=_positive_float, default=500.0, help="Fixed bandwidth for a budget sweep")
    sweep_cmd.add_argument("--workers", type=int, default=1)
    sweep_cmd.add_argument("--out", type=Path, default=None, help="CSV report path")
    sweep_cmd.add_argument("--gnuplot", action="store_true", help="Also write <out>.gp")

    compare = commands.add_parser("compare", help="Accuracy of device-only, edge-only, partition-only and joint search")
    _add_model_flags(compare)
    compare.add_argument("--bandwidth-kbps", type=_positive_float, default=400.0)
    compare.add_argument("--from", dest="start", type=_positive_float, default=100.0, help="Smallest budget in ms")
    compare.add_argument("--to", dest="stop", type=_positive_float, default=1000.0, help="Largest budget in ms")
    compare.add_argument("--steps", type=int, default=10)
    compare.add_argument("--out", type=Path, default=None)
    compare.add_argument("--gnuplot", action="store_true")

    simulate = commands.add_parser("simulate", help="Simulated co-inference latency")
    _add_model_flags(simulate)
    simulate.add_argument("--scenario", choices=["edge-only", "plan"], required=True)
    simulate.add_argument("--bandwidth-kbps", type=_positive_float, nargs="+", default=[1000.0, 50.0])
    simulate.add_argument("--input-bytes", type=_non_negative_int, default=EDGE_ONLY_INPUT_BYTES)
    simulate.add_argument("--server-ms", type=_non_negative_float, default=10.0)
    simulate.add_argument("--latency-ms", type=_positive_float, default=1000.0)
    simulate.add_argument("--force-exit", type=int, default=None)
    simulate.add_argument("--force-partition", type=_non_negative_int, default=None)
    simulate.add_argument("--jitter", type=_fraction, default=0.0)

    edge = commands.add_parser("edge", help="Run the edge agent")
    edge.add_argument("--listen", default="0.0.0.0:9000", help="HOST:PORT")
    edge.add_argument("--model", type=Path, default=None)
    edge.add_argument("--predictors", type=Path, default=None)
    edge.add_argument("--mode", choices=["kernels", "delay"], default="kernels")
    edge.add_argument("--shape-kbps", type=_positive_float, default=None)

    device = commands.add_parser("device", help="Run one co-inference against an edge agent")
    device.add_argument("--connect", default="127.0.0.1:9000", help="HOST:PORT")
    device.add_argument("--model", type=Path, default=None)
    device.add_argument("--predictors", type=Path, default=None)
    device.add_argument("--mode", choices=["kernels", "delay"], default="kernels")
    device.add_argument("--budget-ms", type=_positive_float, required=True)
    device.add_argument("--probe", action="store_true", help="Measure the uplink before planning")
    device.add_argument("--bandwidth-kbps", type=_positive_float, default=DEFAULT_BANDWIDTH_KBPS)
    device.add_argument("--force-exit", type=int, default=None)
    device.add_argument("--force-partition", type=_non_negative_int, default=None)
    device.add_argument("--include-loading", action="store_true")
    device.add_argument("--shape-kbps", type=_positive_float, default=None)
    return parser


def _model_and_predictors(args: argparse.Namespace):
    model = load_model(args.model or default_model_path())
    predictors = load_predictors(args.predictors or default_predictors_path())
    return model, predictors


def _cmd_profile(args: argparse.Namespace, config: GlobalConfig) -> Report:
    seed = config.seed or 0
    cases = default_suite(seed) if args.suite == "default" else small_suite(seed)
    rows = profile_suite(cases, args.out, slowdown=args.slowdown)
    return ProfileReport(
        out=str(args.out),
        rows=len(rows),
        kinds=dict(Counter(row.kind for row in rows)),
        slowdown=args.slowdown,
    )


def _cmd_fit(args: argparse.Namespace, config: GlobalConfig) -> Report:
    existing = load_predictors(args.merge) if args.merge else None
    predictors = fit_from_csv(args.measurements, args.side, existing=existing)
    save_predictors(predictors, args.out)
    return FitReport(
        out=str(args.out),
        side=args.side,
        measurements=str(args.measurements),
        regressions={
            kind: RegressionDoc(w=list(model.weights), b=model.intercept)
            for kind, model in predictors.side(args.side).items()
        },
    )


def _plan_request(args: argparse.Namespace, bandwidth_kbps: float, budget_ms: float) -> PlanRequest:
    model, predictors = _model_and_predictors(args)
    return PlanRequest.build(
        model=model,
        predictors=predictors,
        bandwidth_bps=bandwidth_kbps * 1000.0,
        latency_budget_ms=budget_ms,
        include_loading=args.include_loading,
        count_result_transfer=args.count_result_transfer,
    )


def _cmd_plan(args: argparse.Namespace, config: GlobalConfig) -> Report:
    request = _plan_request(args, args.bandwidth_kbps, args.latency_ms)
    return PlanReport.from_outcome(plan(request), request)


def _cmd_sweep(args: argparse.Namespace, config: GlobalConfig) -> Report:
    model, predictors = _model_and_predictors(args)
    fixed = args.budget_ms if args.axis == "bandwidth" else args.bandwidth_kbps
    spec = SweepSpec.build(
        axis=args.axis,
        grid=linear_grid(args.start, args.stop, args.steps),
        fixed=fixed,
        model=model,
        predictors=predictors,
        include_loading=args.include_loading,
        count_result_transfer=args.count_result_transfer,
        workers=max(1, args.workers),
    )
    rows = sweep(spec, args.out, gnuplot=args.gnuplot)
    return SweepReport(
        axis=args.axis,
        fixed=fixed,
        out=str(args.out) if args.out else None,
        rows=[SweepRowDoc.from_row(row) for row in rows],
    )


def _cmd_compare(args: argparse.Namespace, config: GlobalConfig) -> Report:
    model, predictors = _model_and_predictors(args)
    frame = compare_methods(
        linear_grid(args.start, args.stop, args.steps),
        args.bandwidth_kbps * 1000.0,
        model,
        predictors,
        out=args.out,
        include_loading=args.include_loading,
        count_result_transfer=args.count_result_transfer,
        gnuplot=args.gnuplot,
    )
    return CompareReport.from_frame(frame, args.bandwidth_kbps, str(args.out) if args.out else None)


def _cmd_simulate(args: argparse.Namespace, config: GlobalConfig) -> Report:
    points = []
    if args.scenario == "edge-only":
        for bandwidth_kbps in args.bandwidth_kbps:
            scenario = ScenarioConfig(
                server_compute_ms=args.server_ms,
                input_bytes=args.input_bytes,
                bandwidth_bps=bandwidth_kbps * 1000.0,
                jitter=args.jitter,
                seed=config.seed,
            )
            points.append(SimulatePointDoc(bandwidth_kbps=bandwidth_kbps, latency_ms=simulate_edge_only(scenario)))
    else:
        for bandwidth_kbps in args.bandwidth_kbps:
            request = _plan_request(args, bandwidth_kbps, args.latency_ms)
            options = dict(
                bandwidth_bps=request.bandwidth_bps,
                include_loading=request.include_loading,
                count_result_transfer=request.count_result_transfer,
            )
            outcome = forced_plan(request, args.force_exit, args.force_partition)
            selected = outcome if outcome.feasible else outcome.best
            latency = simulate_plan(
                request.model, request.predictors, selected, jitter=args.jitter, seed=config.seed, **options
            )
            points.append(SimulatePointDoc(
                bandwidth_kbps=bandwidth_kbps,
                latency_ms=latency,
                exit=selected.exit_index,
                partition=selected.partition,
                predicted_latency_ms=selected.predicted_latency_ms,
            ))
    return SimulateReport(scenario=args.scenario, jitter=args.jitter, seed=config.seed, points=points)


def _agent_config(args: argparse.Namespace, role: str, endpoint: str, default_host: str, config: GlobalConfig) -> AgentConfig:
    host, port = parse_endpoint(endpoint, default_host)
    return AgentConfig.build(
        role=role,
        host=host,
        port=port,
        model_path=args.model or default_model_path(),
        predictors_path=args.predictors or default_predictors_path(),
        mode=args.mode,
        shape_bps=args.shape_kbps * 1000.0 if args.shape_kbps else None,
        seed=config.seed or 0,
    )


def _cmd_edge(args: argparse.Namespace, config: GlobalConfig) -> Optional[Report]:
    serve_edge(_agent_config(args, "edge", args.listen, "0.0.0.0", config))
    return None


def _cmd_device(args: argparse.Namespace, config: GlobalConfig) -> Report:
    agent = DeviceAgent(_agent_config(args, "device", args.connect, "127.0.0.1", config))
    run = asyncio.run(agent.run(
        args.budget_ms,
        probe=args.probe,
        bandwidth_bps=args.bandwidth_kbps * 1000.0,
        force_exit=args.force_exit,
        force_partition=args.force_partition,
        include_loading=args.include_loading,
    ))
    return DeviceReport.from_run(run)


COMMANDS = {
    "profile": _cmd_profile,
    "fit": _cmd_fit,
    "plan": _cmd_plan,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "simulate": _cmd_simulate,
    "edge": _cmd_edge,
    "device": _cmd_device,
}


def _console_level(config: GlobalConfig) -> int:
    if config.verbosity < 0:
        return logging.WARNING
    return logging.DEBUG if config.verbosity > 0 else logging.INFO


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and print its report to stdout.

    Returns:
        0 on success (an infeasible plan is an answer), 1 on a domain error, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logger = get_logger()
    try:
        config = GlobalConfig(
            verbosity=-1 if args.quiet else min(args.verbose, 2),
            output_format=args.output_format,
            seed=resolve_seed(args.seed),
        )
        logger.set_console_level(_console_level(config))
        report = COMMANDS[args.command](args, config)
    except BaseProjectException as e:
        logger.error(f"edgent {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR

    if report is not None:
        print(report.render(config.output_format))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    try:
        code = dispatch(argv)
    except Exception as e:
        get_logger().critical(f"Unhandled error in edgent: {e}")
        raise
    sys.exit(code)
