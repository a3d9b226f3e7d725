import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import (
    DecompositionError,
    DimensionMismatchError,
    InfeasibleProblemError,
    InstanceTooLargeError,
    InvalidInstanceError,
    InvalidPathsError,
    NonConvergenceError,
    ScenarioParseError,
)
from app.core.logging_config import setup_logging
from app.models.network import FlowAssignment, NetworkInstance, RateMatrix, RoutingPaths
from app.services.core_model import paths_to_flows, simulate_batteries
from app.services.fixed_fractional import solve_fixed_fractional
from app.services.lp_oracle import SETTINGS, lexmax_reference
from app.services.packing_fptas import solve_fractional_fptas
from app.services.reports import build_summary, write_reports
from app.services.routing_search import ROUTING_MODES, enumerate_routings, maxmin_unsplittable_routing
from app.services.scenario_io import (
    GENERATOR_KINDS,
    canonical_paths,
    generate_instance,
    load_paths,
    parse_scenario,
    write_paths,
    write_scenario,
)
from app.services.unsplittable_rates import solve_unsplittable_rates

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INVALID = 3
EXIT_NONCONVERGENCE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harvest-rates",
        description=f"{settings.PROJECT_NAME}: max-min fair sensing rates and routing for energy-harvesting sensor networks",
    )
    parser.add_argument("--log-level", default=None, help="logging level (default from settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    def solver(name: str, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("scenario", help="scenario JSON file")
        cmd.add_argument("--out", default="results", help="directory for rates.csv, flows.csv and summary.json")
        cmd.add_argument("--delta", type=float, default=None, help="binary-search precision")
        cmd.add_argument("--oracle", action="store_true", help="cross-check against the exact lexmax oracle")
        return cmd

    cmd = solver("unsplittable-rates", "max-min fair rates for given unsplittable paths")
    cmd.add_argument("--paths", default=None, help="paths JSON file (defaults to the scenario's paths)")

    solver("fixed-fractional", "max-min fair constant rates with fractional time-invariable routing")

    cmd = solver("fractional-fptas", "(1-eps)-approximate max-min fair rates with time-variable routing")
    cmd.add_argument("--epsilon", type=float, default=settings.EPSILON, help="approximation accuracy")

    solver("find-unsplittable", "time-invariable unsplittable routing maximizing the common rate")

    cmd = solver("lexmax-oracle", "exact lexicographically maximum rates by linear programming")
    cmd.add_argument("--setting", choices=SETTINGS, default="fractional-timevar")
    cmd.add_argument("--paths", default=None, help="paths JSON file for the given-paths setting")

    cmd = solver("enumerate-routings", "brute-force the best routing tree or unsplittable routing")
    cmd.add_argument("--mode", choices=ROUTING_MODES, default="tree")

    gen = sub.add_parser("generate", help="write a generated scenario")
    gen.add_argument("kind", choices=GENERATOR_KINDS)
    gen.add_argument("--out", required=True, help="scenario JSON file to write")
    gen.add_argument("--k", type=int, default=3, help="family size for balanced (fig4) and alternating (fig5)")
    gen.add_argument("--n", type=int, default=5, help="node count for random")
    gen.add_argument("--T", type=int, default=3, help="horizon for random")
    gen.add_argument("--horizon", type=int, default=4, help="horizon for alternating")
    gen.add_argument("--seed", type=int, default=0, help="seed for random")
    gen.add_argument("--paths-out", default=None, help="also write the family's canonical paths")
    gen.add_argument("--tree", action="store_true", help="canonical paths as a routing tree")
    return parser


def _resolve_paths(args: argparse.Namespace, inst: NetworkInstance, embedded: Optional[RoutingPaths]) -> RoutingPaths:
    if getattr(args, "paths", None):
        return load_paths(args.paths, inst)
    if embedded is None:
        raise InvalidPathsError(["no routing paths: pass --paths or embed them in the scenario"])
    return embedded


def _oracle_deviation(
    inst: NetworkInstance, setting: str, rates: RateMatrix, paths: Optional[RoutingPaths] = None
) -> Optional[float]:
    try:
        reference = lexmax_reference(inst, setting, paths)
    except InstanceTooLargeError as e:
        logger.warning(f"Oracle cross-check skipped: {str(e)}")
        return None
    exact = np.array([float(v) for v in reference.sorted_exact])
    deviation = float(np.abs(rates.sorted_vector(inst) - exact).max(initial=0.0))
    logger.info(f"Oracle cross-check ({setting}): max deviation {deviation:.3g}")
    return deviation


def _solve(args: argparse.Namespace, inst: NetworkInstance, embedded: Optional[RoutingPaths]) -> Tuple[
    str, RateMatrix, Optional[FlowAssignment], int, Dict[str, Any]
]:
    """Dispatch to the selected solver; returns rates, flows, iteration count and extra summary fields."""
    command = args.command
    extra: Dict[str, Any] = {}
    setting = None
    paths = None

    if command == "unsplittable-rates":
        paths = _resolve_paths(args, inst, embedded)
        result = solve_unsplittable_rates(inst, paths, args.delta)
        rates, flows, iterations = result.rates, result.flows, len(result.iterations)
        setting = "given-paths"
    elif command == "fixed-fractional":
        result = solve_fixed_fractional(inst, args.delta)
        rates, flows, iterations = result.rates, result.flows, len(result.iterations)
        extra["decomposed"] = result.decomposition is not None
        setting = "fractional-constant"
    elif command == "fractional-fptas":
        result = solve_fractional_fptas(inst, args.epsilon, args.delta)
        rates, flows, iterations = result.rates, result.flows, len(result.iterations)
        setting = "fractional-timevar"
    elif command == "find-unsplittable":
        result = maxmin_unsplittable_routing(inst, args.delta)
        values = np.zeros((inst.nodes, inst.horizon))
        values[inst.sources] = result.rate
        rates = RateMatrix(values=values)
        flows = paths_to_flows(inst, result.paths, rates)
        iterations = 1
        extra["paths"] = result.paths.model_dump()
    elif command == "lexmax-oracle":
        paths = _resolve_paths(args, inst, embedded) if args.setting == "given-paths" else None
        result = lexmax_reference(inst, args.setting, paths)
        rates, flows, iterations = result.rates, None, result.lp_solves
        extra["sorted_exact"] = [str(v) for v in result.sorted_exact]
    elif command == "enumerate-routings":
        result = enumerate_routings(inst, args.mode, show_progress=True, delta=args.delta)
        rates = result.rates
        flows = paths_to_flows(inst, result.paths, rates)
        iterations = result.candidates
        extra["paths"] = result.paths.model_dump()
    else:
        raise ValueError(f"unknown command {command}")

    if getattr(args, "oracle", False):
        if setting is None:
            logger.warning(f"Oracle cross-check is not defined for {command}")
        else:
            deviation = _oracle_deviation(inst, setting, rates, paths)
            if deviation is not None:
                extra["oracle_deviation"] = deviation
    return command, rates, flows, iterations, extra


def _generate(args: argparse.Namespace) -> int:
    inst = generate_instance(args.kind, k=args.k, n=args.n, T=args.T, seed=args.seed, horizon=args.horizon)
    write_scenario(args.out, inst)
    logger.info(f"Wrote {args.kind} scenario to {args.out}")
    if args.paths_out:
        paths = canonical_paths(args.kind, args.k, tree=args.tree)
        if paths is None:
            logger.warning(f"{args.kind} scenarios have no canonical paths")
        else:
            write_paths(args.paths_out, paths)
    return EXIT_OK


def _parameters(args: argparse.Namespace) -> Dict[str, Any]:
    keys = ("delta", "epsilon", "setting", "mode", "paths")
    return {key: getattr(args, key) for key in keys if getattr(args, key, None) is not None}


def run(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        if args.command == "generate":
            return _generate(args)

        inst, embedded = parse_scenario(args.scenario)
        started = time.perf_counter()
        command, rates, flows, iterations, extra = _solve(args, inst, embedded)
        wall_time = time.perf_counter() - started

        summary = build_summary(inst, rates, command, iterations, wall_time, _parameters(args), extra)
        battery = simulate_batteries(inst, rates, flows) if flows is not None else None
        write_reports(Path(args.out), inst, rates, summary, flows, battery)
        logger.info(f"{command}: min rate {summary['min_rate']:.6g} in {wall_time:.3f}s")
        return EXIT_OK
    except (ScenarioParseError, InvalidInstanceError, DimensionMismatchError, InstanceTooLargeError) as e:
        logger.error(f"Invalid input: {str(e)}")
        return EXIT_INVALID
    except (InfeasibleProblemError, DecompositionError) as e:
        logger.error(f"No solution: {str(e)}")
        return EXIT_INFEASIBLE
    except NonConvergenceError as e:
        logger.error(f"Solver did not converge: {str(e)} {e.diagnostics}")
        return EXIT_NONCONVERGENCE
    except (OSError, ValueError) as e:
        logger.error(f"Invalid input: {str(e)}")
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
