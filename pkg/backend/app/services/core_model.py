import logging
import math
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError
from app.models.network import (
    BatteryTrace,
    FeasibilityReport,
    FlowAssignment,
    NetworkInstance,
    RateMatrix,
    RoutingPaths,
    ValidationReport,
)

logger = logging.getLogger(__name__)


def validate_instance(inst: NetworkInstance) -> ValidationReport:
    """Check the modelling assumptions every solver relies on."""
    violations = []

    reaching = nx.ancestors(inst.graph, inst.sink)
    for i in inst.sources:
        if i not in reaching:
            violations.append(f"unreachable: node {i} has no directed path to sink {inst.sink}")

    if not math.isfinite(inst.battery_capacity) or inst.battery_capacity < 0:
        violations.append(f"battery capacity B must be finite and nonnegative, got {inst.battery_capacity}")
    harvest = inst.harvest_array
    if not np.all(np.isfinite(harvest)) or np.any(harvest < 0):
        violations.append("negative energy: harvest entries must be finite and nonnegative")
    for i, b in enumerate(inst.initial_battery):
        if i == inst.sink:
            continue
        if not math.isfinite(b) or b < 0 or b > inst.battery_capacity:
            violations.append(f"initial_battery[{i}] = {b} lies outside [0, B={inst.battery_capacity}]")
    for name in ("c_s", "c_tx", "c_rx"):
        value = getattr(inst, name)
        if not math.isfinite(value) or value < 0:
            violations.append(f"negative energy: cost {name} must be finite and nonnegative, got {value}")

    if inst.c_st <= 0:
        violations.append("c_st must be positive (c_s + c_tx)")
    if inst.c_rt <= 0:
        violations.append("c_rt must be positive (c_rx + c_tx)")

    return ValidationReport(ok=not violations, violations=violations)


def validate_paths(inst: NetworkInstance, paths: RoutingPaths) -> ValidationReport:
    """Check that every node has simple sink paths along instance edges."""
    violations = []
    if len(paths.paths) != inst.nodes:
        return ValidationReport(
            ok=False,
            violations=[f"paths must list {inst.nodes} nodes, got {len(paths.paths)}"],
        )

    expected = 1 if paths.time_invariable else inst.horizon
    for i in inst.sources:
        per_node = paths.paths[i]
        if len(per_node) < expected or (not paths.time_invariable and len(per_node) != expected):
            violations.append(f"node {i} needs {expected} path(s), got {len(per_node)}")
            continue
        for t in range(inst.horizon if not paths.time_invariable else 1):
            path = per_node[t]
            if not path or path[0] != i or path[-1] != inst.sink:
                violations.append(f"path of node {i} in slot {t} must start at {i} and end at sink {inst.sink}")
                continue
            if len(set(path)) != len(path):
                violations.append(f"path of node {i} in slot {t} is not simple")
            for u, v in zip(path, path[1:]):
                if (u, v) not in inst.edge_index:
                    violations.append(f"path of node {i} in slot {t} uses missing edge ({u}, {v})")

    return ValidationReport(ok=not violations, violations=violations)


def is_routing_tree(inst: NetworkInstance, paths: RoutingPaths) -> bool:
    """True when, in every slot, all paths through a node leave it by one edge."""
    slots = 1 if paths.time_invariable else inst.horizon
    for t in range(slots):
        next_hop = {}
        for i in inst.sources:
            path = paths.path(i, t)
            for u, v in zip(path, path[1:]):
                if next_hop.setdefault(u, v) != v:
                    return False
    return True


def battery_levels(
    initial: np.ndarray,
    harvest: np.ndarray,
    consumption: np.ndarray,
    capacity: float,
) -> np.ndarray:
    """Forward battery recursion; last axis is time, output has one extra column."""
    harvest = np.asarray(harvest, dtype=float)
    levels = np.empty(harvest.shape[:-1] + (harvest.shape[-1] + 1,))
    levels[..., 0] = initial
    for t in range(harvest.shape[-1]):
        levels[..., t + 1] = np.minimum(capacity, levels[..., t] + harvest[..., t] - consumption[..., t])
    return levels


def _check_dimensions(inst: NetworkInstance, rates: RateMatrix, flows: FlowAssignment) -> None:
    if rates.values.shape != (inst.nodes, inst.horizon):
        raise DimensionMismatchError(
            f"rates must be {inst.nodes}x{inst.horizon}, got {rates.values.shape[0]}x{rates.values.shape[1]}"
        )
    if flows.values.shape != (len(inst.edges), inst.horizon):
        raise DimensionMismatchError(
            f"flows must be {len(inst.edges)}x{inst.horizon}, got {flows.values.shape[0]}x{flows.values.shape[1]}"
        )


def consumption_matrix(inst: NetworkInstance, rates: RateMatrix, flows: FlowAssignment) -> np.ndarray:
    """Per-slot energy spent by each node; the sink spends nothing."""
    consumption = inst.c_rt * flows.inflow(inst) + inst.c_st * rates.values
    consumption[inst.sink] = 0.0
    return consumption


def simulate_batteries(inst: NetworkInstance, rates: RateMatrix, flows: FlowAssignment) -> BatteryTrace:
    _check_dimensions(inst, rates, flows)
    levels = battery_levels(
        inst.initial_array,
        inst.harvest_array,
        consumption_matrix(inst, rates, flows),
        inst.battery_capacity,
    )
    return BatteryTrace(levels=levels)


def check_feasible(
    inst: NetworkInstance,
    rates: RateMatrix,
    flows: FlowAssignment,
    tol: Optional[float] = None,
) -> FeasibilityReport:
    """Residuals of conservation, battery and sign constraints."""
    tol = settings.FEASIBILITY_TOL if tol is None else tol
    _check_dimensions(inst, rates, flows)

    conservation = flows.inflow(inst) + rates.values - flows.outflow(inst)
    conservation[inst.sink] = 0.0
    battery = simulate_batteries(inst, rates, flows)

    max_residual = float(np.abs(conservation).max(initial=0.0))
    min_battery = battery.minimum(inst)
    min_rate = float(rates.values[inst.sources].min(initial=0.0))
    min_flow = float(flows.values.min(initial=0.0))

    violations = []
    if max_residual > tol:
        violations.append(f"flow conservation violated by {max_residual:.3g}")
    if min_battery < -tol:
        violations.append(f"battery drops to {min_battery:.3g}")
    if min_rate < -tol:
        violations.append(f"negative rate {min_rate:.3g}")
    if min_flow < -tol:
        violations.append(f"negative flow {min_flow:.3g}")
    for k in inst.out_edges[inst.sink]:
        if np.abs(flows.values[k]).max(initial=0.0) > tol:
            violations.append(f"flow leaves the sink on edge {inst.edges[k]}")

    return FeasibilityReport(
        feasible=not violations,
        conservation=conservation,
        battery=battery,
        max_conservation_residual=max_residual,
        min_battery=min_battery,
        min_rate=min_rate,
        min_flow=min_flow,
        violations=violations,
    )


def linearized_battery_slack(inst: NetworkInstance, consumption: np.ndarray) -> float:
    """Smallest slack over prefix and window energy rows of all sources.

    Nonnegative exactly when the simulated battery never goes negative.
    """
    harvest = inst.harvest_array[inst.sources]
    spent = np.asarray(consumption, dtype=float)[inst.sources]
    net = np.concatenate([np.zeros((len(inst.sources), 1)), np.cumsum(harvest - spent, axis=1)], axis=1)

    slack = np.inf
    initial = inst.initial_array[inst.sources]
    for t in range(inst.horizon):
        slack = min(slack, float((initial + net[:, t + 1]).min()))
        for s in range(1, t + 1):
            slack = min(slack, float((inst.battery_capacity + net[:, t + 1] - net[:, s]).min()))
    return slack


def descendant_counts(paths: RoutingPaths, mask: np.ndarray) -> np.ndarray:
    """Number of active nodes relaying through each node per slot."""
    mask = np.asarray(mask, dtype=bool)
    counts = np.zeros(mask.shape, dtype=int)
    nodes, horizon = mask.shape
    for j in range(nodes):
        for t in range(horizon):
            if not mask[j, t]:
                continue
            for i in paths.path(j, t)[1:-1]:
                counts[i, t] += 1
    return counts


def paths_to_flows(inst: NetworkInstance, paths: RoutingPaths, rates: RateMatrix) -> FlowAssignment:
    """Edge flows induced by routing each rate along its path."""
    flows = np.zeros((len(inst.edges), inst.horizon))
    for j in inst.sources:
        for t in range(inst.horizon):
            path = paths.path(j, t)
            for u, v in zip(path, path[1:]):
                flows[inst.edge_index[(u, v)], t] += rates.values[j, t]
    return FlowAssignment(values=flows)


def sorted_rate_vector(inst: NetworkInstance, rates: RateMatrix) -> np.ndarray:
    return rates.sorted_vector(inst)


def lex_compare(first: Sequence[float], second: Sequence[float], tol: float = 1e-9) -> int:
    """Compare two sorted rate vectors; returns -1, 0 or 1."""
    for a, b in zip(first, second):
        if a < b - tol:
            return -1
        if a > b + tol:
            return 1
    return 0
