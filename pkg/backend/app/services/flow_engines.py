import heapq
import logging
import math
from collections import defaultdict
from typing import Any, Dict, Hashable, List, Optional, Set, Tuple

import networkx as nx
from networkx.algorithms.flow import shortest_augmenting_path

from app.core.config import settings
from app.core.exceptions import DecompositionError
from app.models.flow import (
    SINK,
    SOURCE,
    CapacitatedFlowProblem,
    FlowSolution,
    PathDecomposition,
    edge_label,
    inbound,
    outbound,
)

logger = logging.getLogger(__name__)


def split_nodes(problem: CapacitatedFlowProblem) -> nx.DiGraph:
    """Edge-capacitated graph with each node i split into in/out halves.

    Relayed flow crosses the internal edge (capacity u_i, cost c_i); own
    supply enters at the out half, so it never uses the node's capacity.
    """
    unbounded = problem.total_supply + 1.0
    graph = nx.DiGraph()
    graph.add_node(SOURCE)
    graph.add_node(SINK)

    for i in range(problem.nodes):
        if i == problem.sink:
            continue
        capacity = problem.node_capacity[i]
        cost = problem.node_cost[i] if problem.node_cost is not None else 0.0
        graph.add_edge(
            inbound(i),
            outbound(i),
            capacity=unbounded if math.isinf(capacity) else float(capacity),
            weight=float(cost),
        )
        if problem.supplies[i] > 0:
            graph.add_edge(SOURCE, outbound(i), capacity=float(problem.supplies[i]), weight=0.0)

    for i, j in problem.edges:
        if i == problem.sink:
            continue
        graph.add_edge(*edge_label(i, j, problem.sink), capacity=unbounded, weight=0.0)

    return graph


def _residual_network(graph: nx.DiGraph, flows: Dict[Tuple[Any, Any], float]) -> nx.DiGraph:
    """Residual network in the networkx convention (capacity/flow per arc)."""
    residual = nx.DiGraph()
    residual.add_nodes_from(graph)
    for u, v, data in graph.edges(data=True):
        flow = flows.get((u, v), 0.0)
        residual.add_edge(u, v, capacity=data["capacity"], flow=flow)
        residual.add_edge(v, u, capacity=0.0, flow=-flow)
    return residual


def _is_feasible(value: float, total: float, tol: float) -> bool:
    return value >= total - tol * max(1.0, total)


def feasible_flow(problem: CapacitatedFlowProblem, tol: Optional[float] = None) -> FlowSolution:
    """Route all supplies to the sink if possible (max-flow from a super source)."""
    tol = settings.DELTA if tol is None else tol
    graph = split_nodes(problem)
    residual = shortest_augmenting_path(graph, SOURCE, SINK, capacity="capacity")
    value = float(residual.graph["flow_value"])

    flows = {}
    for u, v in graph.edges():
        # networkx leaves zero-capacity arcs out of the residual network
        flow = residual[u][v]["flow"] if residual.has_edge(u, v) else 0.0
        if flow > 0:
            flows[(u, v)] = float(flow)

    return FlowSolution(
        problem=problem,
        flows=flows,
        value=value,
        feasible=_is_feasible(value, problem.total_supply, tol),
        residual=residual,
        tol=tol,
    )


def residual_reachable(sol: FlowSolution, side: str = "out", tol: Optional[float] = None) -> Set[int]:
    """Original nodes whose split half `side` reaches the sink in the residual graph."""
    tol = sol.tol if tol is None else tol
    arcs = nx.DiGraph()
    arcs.add_node(SINK)
    for u, v, data in sol.residual.edges(data=True):
        if u == SOURCE or v == SOURCE:
            continue
        if data["capacity"] - data["flow"] > tol:
            arcs.add_edge(u, v)

    reachable = {sol.problem.sink}
    for label in nx.ancestors(arcs, SINK):
        if isinstance(label, tuple) and label[0] == side:
            reachable.add(label[1])
    return reachable


class _Arc:
    """One directed arc of the residual network used by the min-cost solver."""

    __slots__ = ("tail", "head", "capacity", "cost", "flow", "reverse")

    def __init__(self, tail: Hashable, head: Hashable, capacity: float, cost: float):
        self.tail = tail
        self.head = head
        self.capacity = capacity
        self.cost = cost
        self.flow = 0.0
        self.reverse: Optional["_Arc"] = None

    def remaining(self) -> float:
        return self.capacity - self.flow

    def augment(self, amount: float) -> None:
        self.flow += amount
        self.reverse.flow -= amount


class _CostNetwork:
    def __init__(self, graph: nx.DiGraph):
        self.arcs: Dict[Hashable, List[_Arc]] = defaultdict(list)
        self.forward: Dict[Tuple[Hashable, Hashable], _Arc] = {}
        for u, v, data in graph.edges(data=True):
            arc = _Arc(u, v, data["capacity"], data["weight"])
            back = _Arc(v, u, 0.0, -data["weight"])
            arc.reverse, back.reverse = back, arc
            self.arcs[u].append(arc)
            self.arcs[v].append(back)
            self.forward[(u, v)] = arc

    def shortest_paths(
        self, potentials: Dict[Hashable, float], threshold: float
    ) -> Tuple[Dict[Hashable, float], Dict[Hashable, _Arc]]:
        """Dijkstra on reduced costs from the super source."""
        dist = {SOURCE: 0.0}
        pred: Dict[Hashable, _Arc] = {}
        done = set()
        heap = [(0.0, 0, SOURCE)]
        counter = 1
        while heap:
            d_u, _, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            p_u = potentials[u]
            for arc in self.arcs[u]:
                if arc.remaining() <= threshold or arc.head in done:
                    continue
                reduced = max(0.0, arc.cost + p_u - potentials[arc.head])
                d_v = d_u + reduced
                if d_v < dist.get(arc.head, math.inf):
                    dist[arc.head] = d_v
                    pred[arc.head] = arc
                    heapq.heappush(heap, (d_v, counter, arc.head))
                    counter += 1
        return dist, pred


def min_cost_flow(problem: CapacitatedFlowProblem, tol: Optional[float] = None) -> FlowSolution:
    """Successive shortest paths with node potentials; node costs sit on internal edges."""
    tol = settings.DELTA if tol is None else tol
    graph = split_nodes(problem)
    network = _CostNetwork(graph)
    total = problem.total_supply
    threshold = 1e-12 * max(1.0, total)

    potentials: Dict[Hashable, float] = defaultdict(float)
    remaining = total
    while remaining > tol * max(1.0, total):
        dist, pred = network.shortest_paths(potentials, threshold)
        if SINK not in dist:
            break

        path = []
        node = SINK
        while node != SOURCE:
            arc = pred[node]
            path.append(arc)
            node = arc.tail
        bottleneck = min(remaining, min(arc.remaining() for arc in path))
        for arc in path:
            arc.augment(bottleneck)
        remaining -= bottleneck

        d_sink = dist[SINK]
        for node in list(network.arcs):
            potentials[node] += min(dist.get(node, d_sink), d_sink)

    flows = {key: arc.flow for key, arc in network.forward.items() if arc.flow > 0}
    value = sum(arc.flow for (u, _), arc in network.forward.items() if u == SOURCE)
    cost = sum(arc.cost * arc.flow for arc in network.forward.values())

    return FlowSolution(
        problem=problem,
        flows=flows,
        value=float(value),
        cost=float(cost),
        feasible=_is_feasible(value, total, tol),
        residual=_residual_network(graph, flows),
        potentials=dict(potentials),
        tol=tol,
    )


def decompose_unsplittable(
    sol: FlowSolution, unit: float, tol: Optional[float] = None
) -> PathDecomposition:
    """Split a flow that is integral in `unit` into one path per supply node."""
    tol = 1e-6 if tol is None else tol
    problem = sol.problem

    counts: Dict[Tuple[Any, Any], int] = defaultdict(int)
    for key, flow in sol.flows.items():
        quotient = flow / unit
        whole = round(quotient)
        if abs(quotient - whole) > tol:
            raise DecompositionError(f"flow {flow} on {key[0]} -> {key[1]} is not a multiple of {unit}")
        if whole > 0:
            counts[key] = whole

    successors: Dict[Any, List[Any]] = defaultdict(list)
    for u, v in sorted(counts, key=repr):
        successors[u].append(v)

    paths: Dict[int, List[int]] = {}
    for i in range(problem.nodes):
        if i == problem.sink or problem.supplies[i] <= 0:
            continue
        if abs(problem.supplies[i] / unit - 1.0) > tol:
            raise DecompositionError(f"supply of node {i} is {problem.supplies[i]}, expected {unit}")
        if counts[(SOURCE, outbound(i))] <= 0:
            raise DecompositionError(f"supply of node {i} is not routed")
        counts[(SOURCE, outbound(i))] -= 1

        path = [i]
        node = outbound(i)
        while True:
            step = next((v for v in successors[node] if counts[(node, v)] > 0), None)
            if step is None:
                raise DecompositionError(f"flow from node {i} stops at {node}")
            counts[(node, step)] -= 1
            if step == SINK:
                path.append(problem.sink)
                break
            j = step[1]
            if counts[(inbound(j), outbound(j))] <= 0:
                raise DecompositionError(f"flow into node {j} does not cross it")
            counts[(inbound(j), outbound(j))] -= 1
            if j in path:
                path = path[:path.index(j) + 1]
            else:
                path.append(j)
            node = outbound(j)
        paths[i] = path

    return PathDecomposition(unit=unit, paths=paths)


def floored_unit_problem(
    nodes: int,
    sink: int,
    edges: List[Tuple[int, int]],
    drains: List[float],
    c_st: float,
    c_rt: float,
    rate: float,
) -> Tuple[CapacitatedFlowProblem, Dict[int, int]]:
    """Common-rate problem scaled by 1/rate: unit supplies and integer capacities.

    A node can relay floor((drain - c_st*rate) / (c_rt*rate)) units besides its own.
    """
    sources = [i for i in range(nodes) if i != sink]
    counts = {}
    for i in sources:
        spare = drains[i] - c_st * rate
        if spare < 0:
            counts[i] = 0
        else:
            counts[i] = min(len(sources), int(math.floor(spare / (c_rt * rate) + 1e-12)))
    capacity = [float(counts.get(i, 0)) for i in range(nodes)]
    supplies = [0.0 if i == sink else 1.0 for i in range(nodes)]
    problem = CapacitatedFlowProblem(
        nodes=nodes, sink=sink, edges=edges, node_capacity=capacity, supplies=supplies
    )
    return problem, counts
