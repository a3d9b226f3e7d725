import math
from typing import Any, Dict, List, Optional, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, model_validator

SOURCE = "source"
SINK = "sink"


def inbound(node: int) -> Tuple[str, int]:
    """Split-graph node receiving relayed flow."""
    return ("in", node)


def outbound(node: int) -> Tuple[str, int]:
    """Split-graph node where own supply joins relayed flow."""
    return ("out", node)


def edge_label(i: int, j: int, sink: int) -> Tuple[Any, Any]:
    """Split-graph edge carrying the flow of original edge (i, j)."""
    return (outbound(i), SINK if j == sink else inbound(j))


class CapacitatedFlowProblem(BaseModel):
    """Single-sink flow problem with capacities and optional costs on nodes"""
    model_config = ConfigDict(frozen=True)

    nodes: int
    sink: int
    edges: List[Tuple[int, int]]
    node_capacity: List[float]
    supplies: List[float]
    node_cost: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_vectors(self) -> "CapacitatedFlowProblem":
        for name in ("node_capacity", "supplies", "node_cost"):
            vector = getattr(self, name)
            if vector is not None and len(vector) != self.nodes:
                raise ValueError(f"{name} must have {self.nodes} entries, got {len(vector)}")
        if any(u < 0 for u in self.node_capacity):
            raise ValueError("node_capacity entries must be nonnegative")
        if any(d < 0 or not math.isfinite(d) for d in self.supplies):
            raise ValueError("supplies must be finite and nonnegative")
        if self.node_cost is not None and any(c < 0 for c in self.node_cost):
            raise ValueError("node_cost entries must be nonnegative")
        return self

    @property
    def total_supply(self) -> float:
        return float(sum(d for i, d in enumerate(self.supplies) if i != self.sink))


class FlowSolution(BaseModel):
    """Flow on the split graph together with its residual network"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    problem: CapacitatedFlowProblem
    flows: Dict[Any, float]
    value: float
    cost: float = 0.0
    feasible: bool
    residual: nx.DiGraph
    potentials: Dict[Any, float] = {}
    tol: float

    def edge_flows(self) -> Dict[Tuple[int, int], float]:
        """Flow on each edge of the original graph."""
        return {
            (i, j): self.flows.get(edge_label(i, j, self.problem.sink), 0.0)
            for i, j in self.problem.edges
            if i != self.problem.sink
        }

    def throughput(self, node: int) -> float:
        """Relayed flow entering a node (its own supply excluded)."""
        return self.flows.get((inbound(node), outbound(node)), 0.0)


class PathDecomposition(BaseModel):
    """One sink path per supply node, each carrying the common unit"""
    unit: float
    paths: Dict[int, List[int]]

    def crossings(self, node: int) -> int:
        """Number of paths relaying through a node (excluding its own)."""
        return sum(1 for origin, path in self.paths.items() if origin != node and node in path)
