import logging
from typing import Dict, Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import InvalidPathsError
from app.models.network import BatteryTrace, NetworkInstance, RateMatrix, RoutingPaths
from app.models.solver import IterationRecord, UnsplittableRatesResult, WaterfillState
from app.services.core_model import battery_levels, descendant_counts, paths_to_flows, validate_paths

logger = logging.getLogger(__name__)


def _zero_tol(inst: NetworkInstance, delta: float) -> float:
    return delta * inst.battery_scale


def _node_levels(inst: NetworkInstance, i: int, drops: np.ndarray) -> np.ndarray:
    return battery_levels(
        inst.initial_array[i], inst.harvest_array[i], drops, inst.battery_capacity
    )


def initial_state(inst: NetworkInstance) -> WaterfillState:
    mask = np.zeros((inst.nodes, inst.horizon), dtype=bool)
    mask[inst.sources] = True
    drops = np.zeros((inst.nodes, inst.horizon))
    return WaterfillState(
        mask=mask,
        rates=np.zeros((inst.nodes, inst.horizon)),
        drops=drops,
        battery=battery_levels(inst.initial_array, inst.harvest_array, drops, inst.battery_capacity),
    )


def _consumption_weights(inst: NetworkInstance, paths: RoutingPaths, mask: np.ndarray) -> np.ndarray:
    """Energy drawn per unit of common increment: c_rt*D + c_st*F."""
    return inst.c_rt * descendant_counts(paths, mask) + inst.c_st * mask


def _node_increment(
    inst: NetworkInstance,
    i: int,
    drops: np.ndarray,
    weights: np.ndarray,
    delta: float,
) -> float:
    """Largest increment keeping node i's battery nonnegative in every slot."""
    zero_tol = _zero_tol(inst, delta)
    floor = -1e-3 * zero_tol

    def admissible(increment: float) -> bool:
        return _node_levels(inst, i, drops + increment * weights)[1:].min() >= floor

    levels = _node_levels(inst, i, drops)
    first = int(np.flatnonzero(weights > 0)[0])
    available = levels[first] + inst.harvest_array[i, first] - drops[first]
    hi = max(0.0, available / weights[first])
    if admissible(hi):
        return hi

    lo = 0.0
    # a bisection gap of width moves any level by at most weights.sum() * width
    width = min(delta * max(1.0, hi), zero_tol / (2.0 * weights.sum()))
    for _ in range(settings.MAX_BISECTIONS):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _node_increments(
    inst: NetworkInstance,
    paths: RoutingPaths,
    state: WaterfillState,
    delta: float,
) -> Dict[int, float]:
    weights = _consumption_weights(inst, paths, state.mask)
    increments = {}
    for i in inst.sources:
        if np.any(weights[i] > 0):
            increments[i] = _node_increment(inst, i, state.drops[i], weights[i], delta)
    return increments


def maximize_common_rate(
    inst: NetworkInstance,
    paths: RoutingPaths,
    state: WaterfillState,
    delta: Optional[float] = None,
) -> float:
    """Largest common increment of all active rates (per-node bisection, then minimum)."""
    delta = settings.DELTA if delta is None else delta
    increments = _node_increments(inst, paths, state, delta)
    return min(increments.values()) if increments else 0.0


def advance_state(
    inst: NetworkInstance,
    paths: RoutingPaths,
    state: WaterfillState,
    increment: float,
    limiting_node: Optional[int] = None,
) -> WaterfillState:
    """Apply a common increment to every active rate and update the battery ledger."""
    weights = _consumption_weights(inst, paths, state.mask)
    drops = state.drops + increment * weights
    return state.model_copy(
        update={
            "iteration": state.iteration + 1,
            "rates": state.rates + increment * state.mask,
            "increments": state.increments + [increment],
            "drops": drops,
            "battery": battery_levels(inst.initial_array, inst.harvest_array, drops, inst.battery_capacity),
            "limiting_node": limiting_node,
        }
    )


def fix_rates(
    inst: NetworkInstance,
    paths: RoutingPaths,
    state: WaterfillState,
    delta: Optional[float] = None,
) -> np.ndarray:
    """Apply the zero-battery, overflow-chain and descendant rules to the mask."""
    delta = settings.DELTA if delta is None else delta
    zero_tol = _zero_tol(inst, delta)
    capacity = inst.battery_capacity
    harvest = inst.harvest_array
    mask = state.mask.copy()

    binding = set()
    for i in inst.sources:
        for t in range(inst.horizon):
            if state.battery[i, t + 1] > zero_tol:
                continue
            s = t
            while s >= 0 and state.battery[i, s] + harvest[i, s] - state.drops[i, s] <= capacity + zero_tol:
                binding.add((i, s))
                s -= 1

    for i, t in binding:
        mask[i, t] = False
    for i, t in binding:
        for j in inst.sources:
            if j != i and mask[j, t] and i in paths.path(j, t):
                mask[j, t] = False
    return mask


def _force_fix(inst: NetworkInstance, paths: RoutingPaths, state: WaterfillState, node: int) -> np.ndarray:
    """Fix every active entry that draws on the limiting node's energy."""
    mask = state.mask.copy()
    for t in range(inst.horizon):
        for j in inst.sources:
            if mask[j, t] and (j == node or node in paths.path(j, t)):
                mask[j, t] = False
    return mask


def solve_unsplittable_rates(
    inst: NetworkInstance,
    paths: RoutingPaths,
    delta: Optional[float] = None,
) -> UnsplittableRatesResult:
    """Max-min fair rates for a fixed unsplittable routing by water-filling."""
    delta = settings.DELTA if delta is None else delta
    report = validate_paths(inst, paths)
    if not report.ok:
        raise InvalidPathsError(report.violations)

    try:
        state = initial_state(inst)
        records = []
        while state.mask.any():
            increments = _node_increments(inst, paths, state, delta)
            if not increments:
                # Active entries with no consumption cannot be bounded by energy.
                raise InvalidPathsError(["active rates draw no energy; c_st must be positive"])
            limiting = min(increments, key=lambda i: (increments[i], i))
            increment = increments[limiting]
            state = advance_state(inst, paths, state, increment, limiting)

            before = int(state.mask.sum())
            mask = fix_rates(inst, paths, state, delta)
            forced = False
            if int(mask.sum()) == before:
                logger.warning(
                    f"No rate fixed after increment {increment:.3g} in iteration {state.iteration}; "
                    f"force-fixing entries limited by node {limiting}"
                )
                mask = _force_fix(inst, paths, state, limiting)
                forced = True
            state = state.model_copy(update={"mask": mask})

            records.append(
                IterationRecord(
                    iteration=state.iteration,
                    increment=increment,
                    newly_fixed=before - int(mask.sum()),
                    active_after=int(mask.sum()),
                    forced=forced,
                )
            )
            logger.info(
                f"Iteration {state.iteration}: increment {increment:.6g}, "
                f"fixed {records[-1].newly_fixed}, active {records[-1].active_after}"
            )

        rates = RateMatrix(values=state.rates)
        return UnsplittableRatesResult(
            rates=rates,
            battery=BatteryTrace(levels=state.battery),
            flows=paths_to_flows(inst, paths, rates),
            iterations=records,
        )
    except Exception as e:
        logger.error(f"Error solving unsplittable rates: {str(e)}")
        raise
