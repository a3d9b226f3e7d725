import itertools
import logging
from typing import Dict, List, Optional

import networkx as nx
import numpy as np
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import InfeasibleProblemError, InstanceTooLargeError
from app.models.network import NetworkInstance, RoutingPaths
from app.models.solver import EnumerationResult, RoutingSearchResult
from app.services.core_model import lex_compare
from app.services.fixed_fractional import compute_drains
from app.services.flow_engines import decompose_unsplittable, feasible_flow, floored_unit_problem
from app.services.unsplittable_rates import solve_unsplittable_rates

logger = logging.getLogger(__name__)

ROUTING_MODES = ("tree", "unsplittable")


def _shortest_routing(inst: NetworkInstance) -> RoutingPaths:
    node_paths: List[List[int]] = [[] for _ in range(inst.nodes)]
    for i in inst.sources:
        node_paths[i] = nx.shortest_path(inst.graph, i, inst.sink)
    return RoutingPaths.from_node_paths(node_paths)


def maxmin_unsplittable_routing(inst: NetworkInstance, delta: Optional[float] = None) -> RoutingSearchResult:
    """Time-invariable unsplittable routing with the largest common rate.

    Bisects on the rate; at each trial every node may relay as many whole
    units of the rate as its constant drain allows, and the unit-scaled
    problem is integral, so a feasible flow splits into one path per node.
    """
    delta = settings.DELTA if delta is None else delta
    try:
        drains = compute_drains(inst, delta).values.tolist()
        lambda_max = min(drains[i] / inst.c_st for i in inst.sources)
        if lambda_max <= 0:
            logger.info("Some node cannot sustain any rate; returning shortest paths at rate 0")
            return RoutingSearchResult(rate=0.0, paths=_shortest_routing(inst))

        sources = len(inst.sources)

        def attempt(rate: float):
            problem, counts = floored_unit_problem(
                inst.nodes, inst.sink, inst.edges, drains, inst.c_st, inst.c_rt, rate
            )
            sol = feasible_flow(problem)
            return sol.value >= sources - 1e-9, sol, counts

        ok, sol, counts = attempt(lambda_max)
        if ok:
            rate = lambda_max
        else:
            lo, hi = 0.0, lambda_max
            lo_counts: Dict[int, int] = {}
            width = delta * max(1.0, lambda_max)
            for _ in range(settings.MAX_BISECTIONS):
                if hi - lo <= width:
                    break
                mid = 0.5 * (lo + hi)
                feasible, _, mid_counts = attempt(mid)
                if feasible:
                    lo, lo_counts = mid, mid_counts
                else:
                    hi = mid
            if lo <= 0:
                logger.info("No positive common rate admits an unsplittable routing")
                return RoutingSearchResult(rate=0.0, paths=_shortest_routing(inst))

            # largest rate keeping every uncapped relay count found at lo
            rate = min((
                drains[i] / (inst.c_st + inst.c_rt * lo_counts[i])
                for i in inst.sources
                if lo_counts[i] < sources
            ), default=hi)
            rate = max(lo, min(rate, hi))
            ok, sol, counts = attempt(rate)
            if not ok:
                rate = lo
                ok, sol, counts = attempt(rate)

        decomposition = decompose_unsplittable(sol, 1.0)
        node_paths: List[List[int]] = [[] for _ in range(inst.nodes)]
        for i, path in decomposition.paths.items():
            node_paths[i] = path
        logger.info(f"Unsplittable routing found at common rate {rate:.6g}")
        return RoutingSearchResult(
            rate=rate,
            paths=RoutingPaths.from_node_paths(node_paths),
            capacity_counts=counts,
            decomposition=decomposition.model_copy(update={"unit": rate}),
        )
    except Exception as e:
        logger.error(f"Error searching unsplittable routing: {str(e)}")
        raise


def _tree_candidates(inst: NetworkInstance):
    """Every parent assignment whose parent chains all end at the sink."""
    choices = [list(inst.graph.successors(i)) for i in inst.sources]
    for parents in itertools.product(*choices):
        parent = dict(zip(inst.sources, parents))
        node_paths: List[List[int]] = [[] for _ in range(inst.nodes)]
        valid = True
        for i in inst.sources:
            path = [i]
            while path[-1] != inst.sink:
                nxt = parent[path[-1]]
                if nxt in path:
                    valid = False
                    break
                path.append(nxt)
            if not valid:
                break
            node_paths[i] = path
        if valid:
            yield RoutingPaths.from_node_paths(node_paths)


def _unsplittable_candidates(inst: NetworkInstance):
    options = [list(nx.all_simple_paths(inst.graph, i, inst.sink)) for i in inst.sources]
    for choice in itertools.product(*options):
        node_paths: List[List[int]] = [[] for _ in range(inst.nodes)]
        for i, path in zip(inst.sources, choice):
            node_paths[i] = list(path)
        yield RoutingPaths.from_node_paths(node_paths)


def enumerate_routings(
    inst: NetworkInstance,
    mode: str = "tree",
    show_progress: bool = False,
    delta: Optional[float] = None,
) -> EnumerationResult:
    """Brute-force the lexicographically best time-invariable routing on a tiny instance."""
    if mode not in ROUTING_MODES:
        raise ValueError(f"mode must be one of {', '.join(ROUTING_MODES)}, got {mode}")
    if len(inst.sources) > settings.ENUMERATION_MAX_NODES:
        raise InstanceTooLargeError(
            f"enumeration handles at most {settings.ENUMERATION_MAX_NODES} sensor nodes, "
            f"instance has {len(inst.sources)}"
        )

    candidates = _tree_candidates(inst) if mode == "tree" else _unsplittable_candidates(inst)
    best = None
    scored = 0
    for paths in tqdm(candidates, desc=f"{mode} routings", disable=not show_progress):
        result = solve_unsplittable_rates(inst, paths, delta)
        vector = result.rates.sorted_vector(inst)
        scored += 1
        if best is None or lex_compare(vector, best[0], 1e-9) > 0:
            best = (vector, paths, result.rates)

    if best is None:
        raise InfeasibleProblemError(f"no {mode} routing reaches the sink")
    logger.info(f"Scored {scored} {mode} routings; best minimum rate {float(best[0][0]):.6g}")
    return EnumerationResult(
        mode=mode,
        paths=best[1],
        sorted_rates=np.asarray(best[0]),
        rates=best[2],
        candidates=scored,
    )
