from fractions import Fraction
from typing import Dict, Hashable, List, Optional

from pydantic import BaseModel, ConfigDict

from app.models.network import RateMatrix


class LPResult(BaseModel):
    """Three-way outcome of an exact simplex solve"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: str
    values: List[Fraction] = []
    objective: Optional[Fraction] = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class LexmaxResult(BaseModel):
    """Lexicographically maximum rates computed in exact arithmetic"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    setting: str
    exact: Dict[Hashable, Fraction]
    rates: RateMatrix
    sorted_exact: List[Fraction]
    lp_solves: int


class ThroughputResult(BaseModel):
    """Rates maximizing the total sensed data"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    setting: str
    exact: Dict[Hashable, Fraction]
    rates: RateMatrix
    objective: Fraction
