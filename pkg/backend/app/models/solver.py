from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.models.flow import PathDecomposition
from app.models.network import BatteryTrace, FlowAssignment, RateMatrix, RoutingPaths


class IterationRecord(BaseModel):
    """One water-filling round"""
    iteration: int
    increment: float
    newly_fixed: int
    active_after: int
    forced: bool = False


class WaterfillState(BaseModel):
    """Active mask, accumulated rates and battery ledger of the unsplittable water-filling"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iteration: int = 0
    mask: np.ndarray
    rates: np.ndarray
    increments: List[float] = []
    drops: np.ndarray
    battery: np.ndarray
    limiting_node: Optional[int] = None


class DrainVector(BaseModel):
    """Largest constant per-slot consumption of every node"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray


class UnsplittableRatesResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rates: RateMatrix
    battery: BatteryTrace
    flows: FlowAssignment
    iterations: List[IterationRecord]


class FixedFractionalResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rates: RateMatrix
    flows: FlowAssignment
    drains: DrainVector
    decomposition: Optional[PathDecomposition] = None
    iterations: List[IterationRecord]


class PackingBounds(BaseModel):
    """Prefix and window energy budgets left after the fixed rates"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    # budget[i, s, t]: energy available for slots s..t; s == 0 is the prefix row
    budget: np.ndarray
    # coverage[i, s, t]: number of active entries among slots s..t
    coverage: np.ndarray
    lambda_max: float


class PackingSystem(BaseModel):
    """Packing rows over slot inflows plus the per-slot flow polytope"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    row_node: np.ndarray
    row_start: np.ndarray
    row_end: np.ndarray
    rhs: np.ndarray
    active_rows: np.ndarray
    supplies: np.ndarray
    caps: np.ndarray
    width: float
    epsilon: float
    trial: float

    @property
    def row_count(self) -> int:
        return int(self.rhs.shape[0])

    def matrix(self, nodes: int, horizon: int) -> np.ndarray:
        """Dense 0-1 matrix over the inflow variables, node-major."""
        matrix = np.zeros((self.row_count, nodes * horizon))
        for r in range(self.row_count):
            base = int(self.row_node[r]) * horizon
            matrix[r, base + int(self.row_start[r]):base + int(self.row_end[r]) + 1] = 1.0
        return matrix

    def loads(self, inflow: np.ndarray) -> np.ndarray:
        """Row sums a_r x computed from slot prefix sums."""
        prefix = np.concatenate([np.zeros((inflow.shape[0], 1)), np.cumsum(inflow, axis=1)], axis=1)
        return prefix[self.row_node, self.row_end + 1] - prefix[self.row_node, self.row_start]


class ImprovePackingState(BaseModel):
    """Current packing point with its potential parameters"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    flows: np.ndarray
    inflow: np.ndarray
    epsilon: float
    beta: float
    beta0: float = 0.0
    alpha: float = 0.0
    sigma: float = 0.0
    iterations: int = 0
    duals: Optional[np.ndarray] = None
    costs: Optional[np.ndarray] = None


class PackingOutcome(BaseModel):
    """Result of one packing feasibility test"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: str
    state: ImprovePackingState
    certificate: Optional[np.ndarray] = None

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


class PackingStep(BaseModel):
    """Largest accepted common increment and the packing point routing it"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    increment: float
    flows: np.ndarray
    inflow: np.ndarray
    trials: int
    bounds: PackingBounds


class FixingOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rates: np.ndarray
    mask: np.ndarray
    newly_fixed: int


class FractionalResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rates: RateMatrix
    flows: FlowAssignment
    epsilon: float
    iterations: List[IterationRecord]


class RoutingSearchResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rate: float
    paths: RoutingPaths
    capacity_counts: Dict[int, int] = {}
    decomposition: Optional[PathDecomposition] = None


class EnumerationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: str
    paths: RoutingPaths
    sorted_rates: np.ndarray
    rates: RateMatrix
    candidates: int
