import logging
import math
from typing import Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import InfeasibleProblemError, NonConvergenceError
from app.models.flow import CapacitatedFlowProblem
from app.models.network import FlowAssignment, NetworkInstance, RateMatrix
from app.models.solver import (
    FixingOutcome,
    FractionalResult,
    ImprovePackingState,
    IterationRecord,
    PackingBounds,
    PackingOutcome,
    PackingStep,
    PackingSystem,
)
from app.services.flow_engines import min_cost_flow
from app.services.lp_oracle import build_rate_region, simplex_solve, to_fraction

logger = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_EPSILON_HALVINGS = 4
_OUTER_ROUNDS = 64


def packing_accuracy(epsilon: float) -> float:
    """Share of the user accuracy spent on each packing test."""
    return epsilon * settings.PACKING_ACCURACY_SPLIT


def _window_sums(values: np.ndarray) -> np.ndarray:
    """sums[i, s, t] = values[i, s] + ... + values[i, t] (meaningful for s <= t)."""
    prefix = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(values, axis=1)], axis=1)
    return prefix[:, None, 1:] - prefix[:, :-1, None]


def compute_bounds(inst: NetworkInstance, previous: np.ndarray, mask: np.ndarray) -> PackingBounds:
    """Energy left in every prefix and window after the rates fixed so far."""
    T = inst.horizon
    starts = np.arange(T)[:, None]
    base = np.where(starts == 0, inst.initial_array[:, None, None], inst.battery_capacity)
    budget = base + _window_sums(inst.harvest_array) - inst.c_st * _window_sums(previous)
    coverage = _window_sums(np.asarray(mask, dtype=float))

    rows_s, rows_t = np.triu_indices(T)
    sources = np.asarray(inst.sources)
    row_budget = budget[sources][:, rows_s, rows_t]
    row_coverage = coverage[sources][:, rows_s, rows_t]
    covered = row_coverage > 0
    if covered.any():
        lambda_max = max(0.0, float((row_budget[covered] / row_coverage[covered]).min()) / inst.c_st)
    else:
        lambda_max = 0.0
    return PackingBounds(budget=budget, coverage=coverage, lambda_max=lambda_max)


def build_packing_system(
    inst: NetworkInstance,
    bounds: PackingBounds,
    previous: np.ndarray,
    mask: np.ndarray,
    trial: float,
    epsilon: float,
    delta: Optional[float] = None,
) -> PackingSystem:
    """Packing rows over slot inflows for a trial increment of the active rates.

    Row (i, s, t) bounds node i's relayed inflow over slots s..t by the
    energy left once the trial rates are paid for, divided by c_rt.
    """
    delta = settings.DELTA if delta is None else delta
    zero_tol = delta * inst.battery_scale
    T = inst.horizon
    rows_s, rows_t = np.triu_indices(T)
    sources = np.asarray(inst.sources)

    remaining = (bounds.budget - inst.c_st * bounds.coverage * trial) / inst.c_rt
    per_node = remaining[sources][:, rows_s, rows_t]
    if per_node.size and per_node.min() < -zero_tol:
        node, row = np.unravel_index(int(per_node.argmin()), per_node.shape)
        raise InfeasibleProblemError(
            f"trial {trial:.6g} overdraws node {int(sources[node])} over slots "
            f"{int(rows_s[row])}..{int(rows_t[row])}"
        )
    per_node = np.maximum(per_node, 0.0)

    caps = np.full((inst.nodes, T), np.inf)
    clipped = np.maximum(remaining, 0.0)
    for tau in range(T):
        caps[sources, tau] = clipped[sources, :tau + 1, tau:].min(axis=(1, 2))

    supplies = previous + np.asarray(mask, dtype=float) * trial
    supplies[inst.sink] = 0.0

    rhs = per_node.ravel()
    return PackingSystem(
        row_node=np.repeat(sources, rows_s.size),
        row_start=np.tile(rows_s, sources.size),
        row_end=np.tile(rows_t, sources.size),
        rhs=rhs,
        active_rows=rhs > zero_tol,
        supplies=supplies,
        caps=caps,
        width=float(T),
        epsilon=epsilon,
        trial=trial,
    )


def _ratios(system: PackingSystem, inflow: np.ndarray) -> np.ndarray:
    ratios = np.zeros(system.row_count)
    active = system.active_rows
    ratios[active] = system.loads(inflow)[active] / system.rhs[active]
    return ratios


def _max_ratio(system: PackingSystem, inflow: np.ndarray) -> float:
    return float(_ratios(system, inflow).max(initial=0.0))


def dual_and_costs(state: ImprovePackingState, system: PackingSystem) -> Tuple[np.ndarray, np.ndarray]:
    """Exponential row duals and the per-node, per-slot relay costs they induce."""
    nodes, T = state.inflow.shape
    active = system.active_rows
    exponent = state.alpha * _ratios(system, state.inflow)
    if active.any():
        # a common shift rescales every dual by the same positive factor
        shift = max(0.0, float(exponent[active].max()) - settings.EXP_CLAMP)
        exponent = np.clip(exponent - shift, -settings.EXP_CLAMP, settings.EXP_CLAMP)

    duals = np.zeros(system.row_count)
    duals[active] = np.exp(exponent[active]) / system.rhs[active]

    blocks = np.zeros((nodes, T, T))
    np.add.at(blocks, (system.row_node, system.row_start, system.row_end), duals)
    # costs[i, tau] sums the duals of rows (s, t) with s <= tau <= t
    covering = np.cumsum(np.flip(np.cumsum(np.flip(blocks, axis=2), axis=2), axis=2), axis=1)
    costs = np.diagonal(covering, axis1=1, axis2=2).copy()
    return duals, costs


def min_cost_oracle(
    inst: NetworkInstance,
    system: PackingSystem,
    costs: np.ndarray,
    delta: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Cheapest point of the flow polytope: one min-cost flow per slot."""
    flows = np.zeros((len(inst.edges), inst.horizon))
    total = 0.0
    node_cost = np.maximum(np.asarray(costs, dtype=float), 0.0)
    for t in range(inst.horizon):
        capacity = system.caps[:, t].copy()
        capacity[inst.sink] = np.inf
        problem = CapacitatedFlowProblem(
            nodes=inst.nodes,
            sink=inst.sink,
            edges=inst.edges,
            node_capacity=capacity.tolist(),
            supplies=system.supplies[:, t].tolist(),
            node_cost=node_cost[:, t].tolist(),
        )
        sol = min_cost_flow(problem, delta)
        if not sol.feasible:
            raise InfeasibleProblemError(
                f"slot {t}: only {sol.value:.6g} of {problem.total_supply:.6g} can reach the sink"
            )
        edge_flows = sol.edge_flows()
        for k, edge in enumerate(inst.edges):
            flows[k, t] = edge_flows.get(tuple(edge), 0.0)
        total += sol.cost
    inflow = FlowAssignment(values=flows).inflow(inst)
    inflow[inst.sink] = 0.0
    return flows, inflow, total


def _log_potential(system: PackingSystem, alpha: float, inflow: np.ndarray) -> float:
    active = system.active_rows
    if not active.any():
        return -math.inf
    z = alpha * _ratios(system, inflow)[active]
    top = float(z.max())
    return top + math.log(float(np.exp(z - top).sum()))


def _step_size(system: PackingSystem, state: ImprovePackingState, target_inflow: np.ndarray) -> float:
    """Step toward the oracle point: golden-section minimum of the potential, or sigma if better."""
    if settings.PACKING_STEP_RULE != "line_search":
        return state.sigma

    def potential(step: float) -> float:
        return _log_potential(system, state.alpha, (1.0 - step) * state.inflow + step * target_inflow)

    lo, hi = 0.0, 1.0
    a = hi - _GOLDEN * (hi - lo)
    b = lo + _GOLDEN * (hi - lo)
    fa, fb = potential(a), potential(b)
    for _ in range(40):
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - _GOLDEN * (hi - lo)
            fa = potential(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + _GOLDEN * (hi - lo)
            fb = potential(b)
    best = 0.5 * (lo + hi)
    return best if potential(best) <= potential(state.sigma) else state.sigma


def improve_packing(
    inst: NetworkInstance,
    system: PackingSystem,
    state: ImprovePackingState,
    delta: Optional[float] = None,
) -> PackingOutcome:
    """Move x toward cheap oracle points until its worst row load halves.

    Stops early once x is within the target accuracy, once the relaxed
    optimality condition holds, or when the oracle cost proves that no
    point of the polytope fits under the right-hand sides.
    """
    target = 1.0 + system.epsilon
    beta0 = _max_ratio(system, state.inflow)
    state = state.model_copy(update={"beta": beta0, "beta0": beta0})
    if beta0 <= target:
        return PackingOutcome(status="accepted", state=state)

    eps = state.epsilon
    rows = max(1, int(system.active_rows.sum()))
    log_term = math.log(2.0 * rows / eps)
    alpha = 4.0 * log_term / (beta0 * eps)
    sigma = eps / (4.0 * alpha * system.width)
    budget = min(
        settings.PACKING_MAX_ITERATIONS,
        int(math.ceil(settings.PACKING_SAFETY_FACTOR * system.width * log_term / eps ** 2)),
    )
    state = state.model_copy(update={"alpha": alpha, "sigma": sigma})
    rhs = system.rhs

    for _ in range(budget):
        duals, costs = dual_and_costs(state, system)
        flows, inflow, oracle_cost = min_cost_oracle(inst, system, costs, delta)
        load = float(duals @ system.loads(state.inflow))
        capacity = float(duals @ rhs)
        state = state.model_copy(
            update={"duals": duals, "costs": costs, "iterations": state.iterations + 1}
        )

        if oracle_cost > capacity * (1.0 + 1e-9):
            return PackingOutcome(status="infeasible", state=state, certificate=duals)
        if load - oracle_cost <= eps * (load + state.beta * capacity):
            return PackingOutcome(status="relaxed_optimal", state=state)

        step = _step_size(system, state, inflow)
        new_inflow = (1.0 - step) * state.inflow + step * inflow
        new_flows = (1.0 - step) * state.flows + step * flows
        beta = _max_ratio(system, new_inflow)
        state = state.model_copy(update={"flows": new_flows, "inflow": new_inflow, "beta": beta})

        if beta <= target:
            return PackingOutcome(status="accepted", state=state)
        if beta < beta0 / 2.0:
            return PackingOutcome(status="halved", state=state)

    raise NonConvergenceError(
        f"packing did not converge within {budget} iterations",
        diagnostics={
            "beta": state.beta,
            "beta0": beta0,
            "epsilon": eps,
            "iterations": state.iterations,
            "rows": rows,
            "trial": system.trial,
        },
    )


def solve_packing(inst: NetworkInstance, system: PackingSystem, delta: Optional[float] = None) -> PackingOutcome:
    """Decide whether the trial admits x in the polytope with Ax <= (1+eps)b.

    The search starts from a zero-cost feasible flow of every slot.
    """
    flows, inflow, _ = min_cost_oracle(inst, system, np.zeros((inst.nodes, inst.horizon)), delta)

    state = ImprovePackingState(
        flows=flows,
        inflow=inflow,
        epsilon=system.epsilon,
        beta=_max_ratio(system, inflow),
    )
    halvings = 0
    for _ in range(_OUTER_ROUNDS):
        outcome = improve_packing(inst, system, state, delta)
        state = outcome.state
        if outcome.status in ("accepted", "infeasible"):
            return outcome
        if outcome.status == "relaxed_optimal":
            if halvings >= _EPSILON_HALVINGS:
                logger.debug(
                    f"Trial {system.trial:.6g} undecided at beta {state.beta:.6g} after {halvings} accuracy halvings"
                )
                return outcome.model_copy(update={"status": "undecided"})
            halvings += 1
            state = state.model_copy(update={"epsilon": state.epsilon / 2.0})
    raise NonConvergenceError(
        f"packing made no decision within {_OUTER_ROUNDS} rounds",
        diagnostics={"beta": state.beta, "trial": system.trial, "iterations": state.iterations},
    )


def maximize_rates_packing(
    inst: NetworkInstance,
    previous: np.ndarray,
    mask: np.ndarray,
    epsilon: float,
    delta: Optional[float] = None,
    start: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> PackingStep:
    """Largest common increment of the active rates accepted by the packing test.

    `start` is a packing point routing the current rates; it certifies the
    zero increment. Without it the current rates must be zero.
    """
    delta = settings.DELTA if delta is None else delta
    accuracy = packing_accuracy(epsilon)
    bounds = compute_bounds(inst, previous, mask)
    lambda_max = bounds.lambda_max

    if start is None:
        start = (np.zeros((len(inst.edges), inst.horizon)), np.zeros((inst.nodes, inst.horizon)))
    best = (0.0, start[0], start[1])
    trials = 0

    def attempt(trial: float) -> Optional[ImprovePackingState]:
        try:
            system = build_packing_system(inst, bounds, previous, mask, trial, accuracy, delta)
            outcome = solve_packing(inst, system, delta=delta)
        except InfeasibleProblemError as e:
            logger.debug(f"Trial {trial:.6g} rejected: {str(e)}")
            return None
        return outcome.state if outcome.accepted else None

    if lambda_max > 0:
        trials += 1
        top = attempt(lambda_max)
        if top is not None:
            best = (lambda_max, top.flows, top.inflow)
        else:
            lo, hi = 0.0, lambda_max
            width = max(delta * max(1.0, lambda_max), settings.FPTAS_SEARCH_PRECISION * lambda_max)
            for _ in range(settings.MAX_BISECTIONS):
                if hi - lo <= width:
                    break
                mid = 0.5 * (lo + hi)
                trials += 1
                accepted = attempt(mid)
                if accepted is not None:
                    lo = mid
                    if mid > best[0]:
                        best = (mid, accepted.flows, accepted.inflow)
                else:
                    hi = mid

    logger.debug(f"Packing search: increment {best[0]:.6g} after {trials} trials (upper bound {lambda_max:.6g})")
    return PackingStep(increment=best[0], flows=best[1], inflow=best[2], trials=trials, bounds=bounds)


def fixing_lp(
    inst: NetworkInstance,
    previous: np.ndarray,
    mask: np.ndarray,
    increment: float,
    epsilon: float,
    slack: Optional[float] = None,
) -> FixingOutcome:
    """Fix the active rates that cannot reach the top of their window.

    Each active rate is bounded below by its carried value and above by
    the carried value plus eps*previous + eps*increment + slack; fixed rates
    keep their value. Rates left below the top by the LP maximizing the sum
    of active rates are fixed.
    """
    slack = settings.FIXING_SLACK if slack is None else slack
    accuracy = packing_accuracy(epsilon)
    mask = np.asarray(mask, dtype=bool)

    def solve(shrink: float):
        region = build_rate_region(inst, "fractional-timevar", relaxation=accuracy)
        tops = {}
        for (i, t), var in region.rate_vars.items():
            if mask[i, t]:
                low = previous[i, t] + shrink * increment
                top = to_fraction(previous[i, t] + accuracy * previous[i, t] + (1.0 + accuracy) * increment + slack)
                region.lp.set_bounds(var, low, top)
                tops[(i, t)] = top
            else:
                low = previous[i, t] if shrink == 1.0 else previous[i, t] * shrink
                region.lp.set_bounds(var, low, previous[i, t])
        region.lp.set_objective({region.rate_vars[key]: 1 for key in tops})
        return region, tops, simplex_solve(region.lp)

    try:
        region, tops, result = solve(1.0)
        if not result.optimal:
            logger.warning(f"Fixing LP is {result.status} at increment {increment:.6g}; retrying with relaxed lower bounds")
            region, tops, result = solve(1.0 - 1e-7)
        if not result.optimal:
            raise InfeasibleProblemError(f"fixing LP is {result.status} at increment {increment:.6g}")
    except InfeasibleProblemError as e:
        logger.error(f"Error fixing packing rates: {str(e)}")
        raise

    new_mask = mask.copy()
    rates = np.zeros_like(previous, dtype=float)
    for (i, t), var in region.rate_vars.items():
        value = result.values[var]
        rates[i, t] = float(value)
        if (i, t) in tops and value < tops[(i, t)]:
            new_mask[i, t] = False
    return FixingOutcome(rates=rates, mask=new_mask, newly_fixed=int(mask.sum() - new_mask.sum()))


def solve_fractional_fptas(
    inst: NetworkInstance,
    epsilon: Optional[float] = None,
    delta: Optional[float] = None,
) -> FractionalResult:
    """Element-wise (1-eps)-approximate max-min fair rates with time-variable fractional routing."""
    epsilon = settings.EPSILON if epsilon is None else epsilon
    delta = settings.DELTA if delta is None else delta
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    accuracy = packing_accuracy(epsilon)

    try:
        mask = np.zeros((inst.nodes, inst.horizon), dtype=bool)
        mask[inst.sources] = True
        rates = np.zeros((inst.nodes, inst.horizon))
        flows = np.zeros((len(inst.edges), inst.horizon))
        inflow = np.zeros((inst.nodes, inst.horizon))
        records = []
        limit = 4 * inst.nodes * inst.horizon

        iteration = 0
        while mask.any():
            iteration += 1
            if iteration > limit:
                raise NonConvergenceError(
                    f"fixing did not finish within {limit} rounds",
                    diagnostics={"active": int(mask.sum()), "min_rate": float(rates[inst.sources].min())},
                )
            step = maximize_rates_packing(inst, rates, mask, epsilon, delta, start=(flows, inflow))
            outcome = fixing_lp(inst, rates, mask, step.increment, epsilon)

            before = int(mask.sum())
            new_mask = outcome.mask
            forced = False
            if outcome.newly_fixed == 0 and step.increment <= 0:
                logger.warning(f"Round {iteration} neither raised nor fixed a rate; fixing all {before} active rates")
                new_mask = np.zeros_like(mask)
                forced = True

            rates = rates + mask * step.increment
            flows, inflow = step.flows, step.inflow
            mask = new_mask
            records.append(
                IterationRecord(
                    iteration=iteration,
                    increment=step.increment,
                    newly_fixed=before - int(mask.sum()),
                    active_after=int(mask.sum()),
                    forced=forced,
                )
            )
            logger.info(
                f"Round {iteration}: increment {step.increment:.6g} after {step.trials} trials, "
                f"fixed {records[-1].newly_fixed}, active {records[-1].active_after}"
            )

        scale = 1.0 + accuracy
        return FractionalResult(
            rates=RateMatrix(values=rates / scale),
            flows=FlowAssignment(values=flows / scale),
            epsilon=epsilon,
            iterations=records,
        )
    except Exception as e:
        logger.error(f"Error running fractional FPTAS: {str(e)}")
        raise
