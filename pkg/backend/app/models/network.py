from functools import cached_property
from typing import Dict, List, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class NetworkInstance(BaseModel):
    """Energy-harvesting network over a finite slotted horizon"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    nodes: int = Field(..., gt=0)
    sink: int
    edges: List[Tuple[int, int]]
    horizon: int = Field(..., alias="T", gt=0)
    battery_capacity: float = Field(..., alias="B")
    initial_battery: List[float]
    harvest: List[List[float]]
    c_s: float
    c_tx: float
    c_rx: float

    @model_validator(mode="after")
    def check_dimensions(self) -> "NetworkInstance":
        n, T = self.nodes, self.horizon
        if not 0 <= self.sink < n:
            raise ValueError(f"sink must be a node id in 0..{n - 1}, got {self.sink}")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edges: ({i}, {j}) references a node outside 0..{n - 1}")
            if i == j:
                raise ValueError(f"edges: self-loop at node {i}")
            if (i, j) in seen:
                raise ValueError(f"edges: duplicate edge ({i}, {j})")
            seen.add((i, j))
        if len(self.initial_battery) != n:
            raise ValueError(
                f"initial_battery must have {n} entries (one per node), got {len(self.initial_battery)}"
            )
        if len(self.harvest) != n:
            raise ValueError(f"harvest must have {n} rows (one per node), got {len(self.harvest)}")
        for i, row in enumerate(self.harvest):
            if len(row) != T:
                raise ValueError(f"harvest row {i} must have {T} entries (one per slot), got {len(row)}")
        return self

    @property
    def c_st(self) -> float:
        """Energy to sense and transmit one unit of own data."""
        return self.c_s + self.c_tx

    @property
    def c_rt(self) -> float:
        """Energy to receive and forward one unit of relayed data."""
        return self.c_rx + self.c_tx

    @cached_property
    def sources(self) -> List[int]:
        return [i for i in range(self.nodes) if i != self.sink]

    @cached_property
    def harvest_array(self) -> np.ndarray:
        return np.asarray(self.harvest, dtype=float).reshape(self.nodes, self.horizon)

    @cached_property
    def initial_array(self) -> np.ndarray:
        return np.asarray(self.initial_battery, dtype=float)

    @cached_property
    def edge_index(self) -> Dict[Tuple[int, int], int]:
        return {tuple(edge): k for k, edge in enumerate(self.edges)}

    @cached_property
    def in_edges(self) -> List[List[int]]:
        incoming = [[] for _ in range(self.nodes)]
        for k, (_, j) in enumerate(self.edges):
            incoming[j].append(k)
        return incoming

    @cached_property
    def out_edges(self) -> List[List[int]]:
        outgoing = [[] for _ in range(self.nodes)]
        for k, (i, _) in enumerate(self.edges):
            outgoing[i].append(k)
        return outgoing

    @cached_property
    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.nodes))
        graph.add_edges_from(self.edges)
        return graph

    @property
    def battery_scale(self) -> float:
        """Magnitude used to turn the precision into an energy tolerance."""
        scale = max(
            self.battery_capacity,
            float(self.harvest_array.max(initial=0.0)),
            float(self.initial_array.max(initial=0.0)),
        )
        return scale if scale > 0 else 1.0


class RoutingPaths(BaseModel):
    """Per-node, per-slot sink paths for unsplittable routing"""
    time_invariable: bool = False
    paths: List[List[List[int]]]

    def path(self, node: int, slot: int) -> List[int]:
        per_node = self.paths[node]
        if not per_node:
            return []
        return per_node[0] if self.time_invariable else per_node[slot]

    @classmethod
    def from_node_paths(cls, node_paths: List[List[int]]) -> "RoutingPaths":
        """Wrap one path per node into a time-invariable routing."""
        return cls(time_invariable=True, paths=[[list(p)] if p else [] for p in node_paths])


class RateMatrix(BaseModel):
    """Sensing rates per node and slot (sink row stays zero)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def as_float_matrix(cls, value):
        array = np.array(value, dtype=float)
        if array.ndim != 2:
            raise ValueError(f"values must be a node x slot matrix, got {array.ndim} dimensions")
        return array

    @classmethod
    def zeros(cls, inst: NetworkInstance) -> "RateMatrix":
        return cls(values=np.zeros((inst.nodes, inst.horizon)))

    def sorted_vector(self, inst: NetworkInstance) -> np.ndarray:
        return np.sort(self.values[inst.sources].ravel())

    def min_rate(self, inst: NetworkInstance) -> float:
        return float(self.values[inst.sources].min())


class FlowAssignment(BaseModel):
    """Flow per edge and slot"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def as_float_matrix(cls, value):
        array = np.array(value, dtype=float)
        if array.ndim != 2:
            raise ValueError(f"values must be an edge x slot matrix, got {array.ndim} dimensions")
        return array

    @classmethod
    def zeros(cls, inst: NetworkInstance) -> "FlowAssignment":
        return cls(values=np.zeros((len(inst.edges), inst.horizon)))

    def inflow(self, inst: NetworkInstance) -> np.ndarray:
        """Total flow entering each node per slot."""
        totals = np.zeros((inst.nodes, self.values.shape[1]))
        for k, (_, j) in enumerate(inst.edges):
            totals[j] += self.values[k]
        return totals

    def outflow(self, inst: NetworkInstance) -> np.ndarray:
        totals = np.zeros((inst.nodes, self.values.shape[1]))
        for k, (i, _) in enumerate(inst.edges):
            totals[i] += self.values[k]
        return totals


class BatteryTrace(BaseModel):
    """Battery level per node at the start of each slot plus the final level"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    levels: np.ndarray

    def minimum(self, inst: NetworkInstance) -> float:
        return float(self.levels[inst.sources].min())


class ValidationReport(BaseModel):
    """Outcome of checking an instance against the model assumptions"""
    ok: bool
    violations: List[str] = []


class FeasibilityReport(BaseModel):
    """Residuals of flow conservation, battery and sign constraints"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    feasible: bool
    conservation: np.ndarray
    battery: BatteryTrace
    max_conservation_residual: float
    min_battery: float
    min_rate: float
    min_flow: float
    violations: List[str] = []
