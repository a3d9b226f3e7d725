import logging
from typing import Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import DecompositionError
from app.models.flow import CapacitatedFlowProblem, FlowSolution, PathDecomposition
from app.models.network import FlowAssignment, NetworkInstance, RateMatrix
from app.models.solver import DrainVector, FixedFractionalResult, IterationRecord
from app.services.core_model import battery_levels
from app.services.flow_engines import (
    decompose_unsplittable,
    feasible_flow,
    floored_unit_problem,
    residual_reachable,
)

logger = logging.getLogger(__name__)


def max_constant_drain(inst: NetworkInstance, i: int, delta: Optional[float] = None) -> float:
    """Largest per-slot consumption node i can sustain over the whole horizon."""
    delta = settings.DELTA if delta is None else delta
    initial = inst.initial_array[i]
    harvest = inst.harvest_array[i]

    def sustainable(drain: float) -> bool:
        levels = battery_levels(initial, harvest, np.full(inst.horizon, drain), inst.battery_capacity)
        return levels[1:].min() >= 0.0

    hi = initial + harvest[0]
    if sustainable(hi):
        return float(hi)
    lo = 0.0
    for _ in range(settings.MAX_BISECTIONS):
        if hi - lo <= delta * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if sustainable(mid):
            lo = mid
        else:
            hi = mid
    return lo


def compute_drains(inst: NetworkInstance, delta: Optional[float] = None) -> DrainVector:
    values = np.zeros(inst.nodes)
    for i in inst.sources:
        values[i] = max_constant_drain(inst, i, delta)
    return DrainVector(values=values)


def _rate_problem(
    inst: NetworkInstance,
    drains: DrainVector,
    mask: np.ndarray,
    previous: np.ndarray,
    increment: float,
) -> CapacitatedFlowProblem:
    """Supplies are the node rates; capacities are the energy left for relaying."""
    supplies = previous + mask * increment
    supplies[inst.sink] = 0.0
    capacity = np.maximum(0.0, (drains.values - inst.c_st * supplies) / inst.c_rt)
    capacity[inst.sink] = np.inf
    return CapacitatedFlowProblem(
        nodes=inst.nodes,
        sink=inst.sink,
        edges=inst.edges,
        node_capacity=capacity.tolist(),
        supplies=supplies.tolist(),
    )


def maximize_rates_fixed(
    inst: NetworkInstance,
    drains: DrainVector,
    mask: np.ndarray,
    previous: np.ndarray,
    delta: Optional[float] = None,
) -> Tuple[float, FlowSolution, float]:
    """Largest common increment of the active constant rates.

    Returns the increment, the flow routing it and the final bisection width.
    """
    delta = settings.DELTA if delta is None else delta
    active = [i for i in inst.sources if mask[i]]
    lambda_max = max(
        0.0, min((drains.values[i] - inst.c_st * previous[i]) / inst.c_st for i in active)
    )

    def attempt(increment: float) -> FlowSolution:
        return feasible_flow(_rate_problem(inst, drains, mask, previous, increment), delta)

    top = attempt(lambda_max)
    if top.feasible:
        return lambda_max, top, 0.0

    lo, hi = 0.0, lambda_max
    best = attempt(0.0)
    width = delta * max(1.0, lambda_max)
    for _ in range(settings.MAX_BISECTIONS):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        trial = attempt(mid)
        if trial.feasible:
            lo, best = mid, trial
        else:
            hi = mid
    return lo, best, hi - lo


def fix_rates_residual(
    inst: NetworkInstance,
    sol: FlowSolution,
    mask: np.ndarray,
    tol: Optional[float] = None,
) -> np.ndarray:
    """Keep a node active only if both halves still reach the sink in the residual graph."""
    relay = residual_reachable(sol, side="out", tol=tol)
    intake = residual_reachable(sol, side="in", tol=tol)
    updated = mask.copy()
    for i in inst.sources:
        if mask[i] and not (i in relay and i in intake):
            updated[i] = False
    return updated


def _decompose_equal_rates(
    inst: NetworkInstance, drains: DrainVector, rate: float
) -> Optional[PathDecomposition]:
    """Unsplittable paths for a common rate, when the floored capacities admit them."""
    if rate <= 0:
        return None
    problem, _ = floored_unit_problem(
        inst.nodes, inst.sink, inst.edges, drains.values.tolist(), inst.c_st, inst.c_rt, rate
    )
    sol = feasible_flow(problem)
    if not sol.feasible:
        return None
    try:
        unit_paths = decompose_unsplittable(sol, 1.0)
    except DecompositionError as e:
        logger.warning(f"Common-rate flow could not be decomposed: {str(e)}")
        return None
    return PathDecomposition(unit=rate, paths=unit_paths.paths)


def solve_fixed_fractional(inst: NetworkInstance, delta: Optional[float] = None) -> FixedFractionalResult:
    """Max-min fair constant rates with a time-invariable fractional routing."""
    delta = settings.DELTA if delta is None else delta
    try:
        drains = compute_drains(inst, delta)
        mask = np.zeros(inst.nodes, dtype=bool)
        mask[inst.sources] = True
        rates = np.zeros(inst.nodes)
        records = []
        sol = None
        ratio = 1.0 + inst.c_st / inst.c_rt

        for iteration in range(1, len(inst.sources) + 1):
            increment, sol, width = maximize_rates_fixed(inst, drains, mask, rates, delta)
            rates = rates + mask * increment

            before = int(mask.sum())
            tol = 2.0 * inst.nodes * ratio * width + delta
            updated = fix_rates_residual(inst, sol, mask, tol)
            if int(updated.sum()) == before:
                updated = fix_rates_residual(inst, sol, mask, 1000.0 * tol)
            if int(updated.sum()) == before:
                logger.warning(f"Residual test fixed no node in iteration {iteration}; fixing all active nodes")
                updated = np.zeros_like(mask)
            mask = updated

            records.append(
                IterationRecord(
                    iteration=iteration,
                    increment=increment,
                    newly_fixed=before - int(mask.sum()),
                    active_after=int(mask.sum()),
                )
            )
            logger.info(f"Iteration {iteration}: increment {increment:.6g}, {int(mask.sum())} nodes active")
            if not mask.any():
                break

        edge_flows = sol.edge_flows() if sol is not None else {}
        flows = np.zeros((len(inst.edges), inst.horizon))
        for k, edge in enumerate(inst.edges):
            flows[k, :] = edge_flows.get(tuple(edge), 0.0)

        decomposition = None
        source_rates = rates[inst.sources]
        if source_rates.size and np.ptp(source_rates) <= delta * max(1.0, source_rates.max()):
            decomposition = _decompose_equal_rates(inst, drains, float(source_rates.min()))

        return FixedFractionalResult(
            rates=RateMatrix(values=np.repeat(rates[:, None], inst.horizon, axis=1)),
            flows=FlowAssignment(values=flows),
            drains=drains,
            decomposition=decomposition,
            iterations=records,
        )
    except Exception as e:
        logger.error(f"Error solving fixed fractional rates: {str(e)}")
        raise
