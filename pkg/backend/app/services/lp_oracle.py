import logging
from fractions import Fraction
from typing import Dict, Hashable, List, Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import InfeasibleProblemError, InstanceTooLargeError, InvalidPathsError
from app.models.lp import LexmaxResult, LPResult, ThroughputResult
from app.models.network import NetworkInstance, RateMatrix, RoutingPaths
from app.services.core_model import validate_paths

logger = logging.getLogger(__name__)

Number = Union[int, float, Fraction]

SETTINGS = ("given-paths", "fractional-timevar", "fractional-constant")

_ARTIFICIAL = -1


def to_fraction(value: Number) -> Fraction:
    """Exact rational for instance data; floats snap to the nearest small-denominator fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return Fraction(float(value)).limit_denominator(settings.LP_DENOMINATOR_LIMIT)


class LinearProgram:
    """Builder for small linear programs with exact rational data."""

    def __init__(self):
        self.names: List[str] = []
        self.lower: List[Fraction] = []
        self.upper: List[Optional[Fraction]] = []
        self.constraints: List[Tuple[Dict[int, Fraction], str, Fraction]] = []
        self.objective: Dict[int, Fraction] = {}
        self.sense = "max"

    @property
    def num_variables(self) -> int:
        return len(self.names)

    def add_variable(self, name: str, lower: Number = 0, upper: Optional[Number] = None) -> int:
        self.names.append(name)
        self.lower.append(to_fraction(lower))
        self.upper.append(None if upper is None else to_fraction(upper))
        return len(self.names) - 1

    def set_bounds(self, var: int, lower: Number, upper: Optional[Number] = None) -> None:
        self.lower[var] = to_fraction(lower)
        self.upper[var] = None if upper is None else to_fraction(upper)

    def add_constraint(self, coefficients: Dict[int, Number], sense: str, rhs: Number) -> None:
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"constraint sense must be <=, >= or ==, got {sense}")
        row = {v: to_fraction(a) for v, a in coefficients.items() if a != 0}
        self.constraints.append((row, sense, to_fraction(rhs)))

    def set_objective(self, coefficients: Dict[int, Number], sense: str = "max") -> None:
        if sense not in ("max", "min"):
            raise ValueError(f"objective sense must be max or min, got {sense}")
        self.objective = {v: to_fraction(a) for v, a in coefficients.items() if a != 0}
        self.sense = sense

    def copy(self) -> "LinearProgram":
        clone = LinearProgram()
        clone.names = list(self.names)
        clone.lower = list(self.lower)
        clone.upper = list(self.upper)
        clone.constraints = list(self.constraints)
        clone.objective = dict(self.objective)
        clone.sense = self.sense
        return clone


class _Dictionary:
    """Simplex dictionary x_B = b - A x_N with objective z + c x_N."""

    def __init__(self, A: List[List[Fraction]], b: List[Fraction], c: List[Fraction]):
        self.A = A
        self.b = b
        self.c = c
        self.z = Fraction(0)
        self.m = len(A)
        self.n = len(c)
        self.nb_vars = list(range(self.n))
        self.b_vars = list(range(self.n, self.n + self.m))
        self.pivots = 0

    def pivot(self, i: int, j: int) -> None:
        A, b, c = self.A, self.b, self.c
        inv = 1 / A[i][j]
        row = [a * inv for a in A[i]]
        row[j] = inv
        A[i] = row
        b[i] = b[i] * inv
        nonzero = [l for l in range(self.n) if row[l] != 0]

        for k in range(self.m):
            if k == i:
                continue
            f = A[k][j]
            if f == 0:
                continue
            other = A[k]
            for l in nonzero:
                other[l] = -f * inv if l == j else other[l] - f * row[l]
            b[k] -= f * b[i]

        f = c[j]
        if f != 0:
            for l in nonzero:
                c[l] = -f * inv if l == j else c[l] - f * row[l]
            self.z += f * b[i]

        self.nb_vars[j], self.b_vars[i] = self.b_vars[i], self.nb_vars[j]
        self.pivots += 1

    def bland_step(self) -> str:
        candidates = [(self.nb_vars[j], j) for j in range(self.n) if self.c[j] > 0]
        if not candidates:
            return "optimal"
        _, j = min(candidates)
        ratios = [(self.b[i] / self.A[i][j], self.b_vars[i], i) for i in range(self.m) if self.A[i][j] > 0]
        if not ratios:
            return "unbounded"
        _, _, i = min(ratios)
        self.pivot(i, j)
        return "go_on"

    def run(self) -> str:
        while True:
            status = self.bland_step()
            if status != "go_on":
                return status

    def drop_column(self, j: int) -> None:
        for row in self.A:
            del row[j]
        del self.c[j]
        del self.nb_vars[j]
        self.n -= 1

    def drop_row(self, i: int) -> None:
        del self.A[i]
        del self.b[i]
        del self.b_vars[i]
        self.m -= 1


def _standard_form(lp: LinearProgram) -> Tuple[List[List[Fraction]], List[Fraction], List[Fraction]]:
    """Rows a x' <= r over shifted variables x' = x - lower >= 0."""
    n = lp.num_variables
    A: List[List[Fraction]] = []
    b: List[Fraction] = []

    def add_row(coefficients: Dict[int, Fraction], rhs: Fraction, sign: int) -> None:
        row = [0] * n
        for v, a in coefficients.items():
            row[v] = sign * a
        A.append(row)
        b.append(sign * rhs)

    for coefficients, sense, rhs in lp.constraints:
        shifted = rhs - sum(a * lp.lower[v] for v, a in coefficients.items())
        if sense in ("<=", "=="):
            add_row(coefficients, shifted, 1)
        if sense in (">=", "=="):
            add_row(coefficients, shifted, -1)
    for v, upper in enumerate(lp.upper):
        if upper is not None:
            add_row({v: Fraction(1)}, upper - lp.lower[v], 1)

    sign = 1 if lp.sense == "max" else -1
    c = [0] * n
    for v, a in lp.objective.items():
        c[v] = sign * a
    return A, b, c


def _restore_objective(tableau: _Dictionary, costs: List[Fraction]) -> None:
    tableau.c = [0] * tableau.n
    tableau.z = Fraction(0)
    column = {v: j for j, v in enumerate(tableau.nb_vars)}
    row_of = {v: i for i, v in enumerate(tableau.b_vars)}
    for v, cv in enumerate(costs):
        if cv == 0:
            continue
        if v in column:
            tableau.c[column[v]] += cv
        else:
            i = row_of[v]
            tableau.z += cv * tableau.b[i]
            for l in range(tableau.n):
                if tableau.A[i][l] != 0:
                    tableau.c[l] -= cv * tableau.A[i][l]


def simplex_solve(lp: LinearProgram) -> LPResult:
    """Exact two-phase simplex with Bland's rule."""
    A, b, c = _standard_form(lp)
    n = lp.num_variables
    tableau = _Dictionary(A, b, [0] * n)

    if tableau.m and min(b) < 0:
        for row in tableau.A:
            row.append(Fraction(-1))
        tableau.c.append(Fraction(-1))
        tableau.nb_vars.append(_ARTIFICIAL)
        tableau.n += 1
        start = min(range(tableau.m), key=lambda i: (tableau.b[i], i))
        tableau.pivot(start, tableau.n - 1)
        tableau.run()
        if tableau.z < 0:
            return LPResult(status="infeasible", pivots=tableau.pivots)

        if _ARTIFICIAL in tableau.b_vars:
            i = tableau.b_vars.index(_ARTIFICIAL)
            j = next(
                (l for l in range(tableau.n) if tableau.nb_vars[l] != _ARTIFICIAL and tableau.A[i][l] != 0),
                None,
            )
            if j is None:
                tableau.drop_row(i)
            else:
                tableau.pivot(i, j)
        tableau.drop_column(tableau.nb_vars.index(_ARTIFICIAL))

    _restore_objective(tableau, c)
    status = tableau.run()
    if status == "unbounded":
        return LPResult(status="unbounded", pivots=tableau.pivots)

    values = list(lp.lower)
    for i, v in enumerate(tableau.b_vars):
        if v < n:
            values[v] = lp.lower[v] + tableau.b[i]
    objective = sum((a * values[v] for v, a in lp.objective.items()), Fraction(0))
    return LPResult(status="optimal", values=values, objective=objective, pivots=tableau.pivots)


class RateRegion:
    """Linear program over rates and flows for one routing setting."""

    def __init__(self, lp: LinearProgram, rate_vars: Dict[Hashable, int], flow_vars: Dict[Tuple[int, int], int]):
        self.lp = lp
        self.rate_vars = rate_vars
        self.flow_vars = flow_vars


def _energy_rows(inst: NetworkInstance):
    """(start, end, budget) rows per source: prefix rows first, then windows."""
    harvest = [[to_fraction(e) for e in row] for row in inst.harvest]
    capacity = to_fraction(inst.battery_capacity)
    for i in inst.sources:
        initial = to_fraction(inst.initial_battery[i])
        for s in range(inst.horizon):
            for t in range(s, inst.horizon):
                income = sum(harvest[i][s:t + 1], Fraction(0))
                budget = (initial if s == 0 else capacity) + income
                yield i, s, t, budget


def build_rate_region(
    inst: NetworkInstance,
    setting: str,
    paths: Optional[RoutingPaths] = None,
    relaxation: Optional[Number] = None,
) -> RateRegion:
    """Rates, flows and linearized battery rows for the chosen setting.

    With a relaxation r the multi-slot rows become
    c_rt*inflow + (1+r)*c_st*rates <= (1+r)*budget, while every slot keeps the
    exact single-slot cap c_rt*inflow_slot + c_st*rates <= budget.
    """
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {', '.join(SETTINGS)}, got {setting}")
    if setting == "given-paths":
        if paths is None:
            raise InvalidPathsError(["given-paths setting needs routing paths"])
        report = validate_paths(inst, paths)
        if not report.ok:
            raise InvalidPathsError(report.violations)

    lp = LinearProgram()
    c_st, c_rt = to_fraction(inst.c_st), to_fraction(inst.c_rt)
    T = inst.horizon
    constant = setting == "fractional-constant"
    slots = [0] if constant else list(range(T))

    rate_vars: Dict[Hashable, int] = {}
    for i in inst.sources:
        for t in slots:
            key = i if constant else (i, t)
            rate_vars[key] = lp.add_variable(f"rate[{i},{t}]")

    def rate(i: int, t: int) -> int:
        return rate_vars[i] if constant else rate_vars[(i, t)]

    flow_vars: Dict[Tuple[int, int], int] = {}
    if setting != "given-paths":
        for k, (i, j) in enumerate(inst.edges):
            if i == inst.sink:
                continue
            for t in slots:
                flow_vars[(k, t)] = lp.add_variable(f"flow[{i}->{j},{t}]")
        for i in inst.sources:
            for t in slots:
                row = {rate(i, t): 1}
                for k in inst.in_edges[i]:
                    if (k, t) in flow_vars:
                        row[flow_vars[(k, t)]] = row.get(flow_vars[(k, t)], 0) + 1
                for k in inst.out_edges[i]:
                    row[flow_vars[(k, t)]] = row.get(flow_vars[(k, t)], 0) - 1
                lp.add_constraint(row, "==", 0)

    def relayed(i: int, t: int) -> Dict[int, Fraction]:
        """Inflow of node i in slot t as a linear form (coefficient c_rt)."""
        terms: Dict[int, Fraction] = {}
        if setting == "given-paths":
            for j in inst.sources:
                if i in paths.path(j, t)[1:-1]:
                    terms[rate(j, t)] = terms.get(rate(j, t), 0) + c_rt
        else:
            slot = 0 if constant else t
            for k in inst.in_edges[i]:
                if (k, slot) in flow_vars:
                    terms[flow_vars[(k, slot)]] = terms.get(flow_vars[(k, slot)], 0) + c_rt
        return terms

    factor = None if relaxation is None else 1 + to_fraction(relaxation)
    for i, s, t, budget in _energy_rows(inst):
        sensed: Dict[int, Fraction] = {}
        inflow: Dict[int, Fraction] = {}
        for tau in range(s, t + 1):
            v = rate(i, tau)
            sensed[v] = sensed.get(v, 0) + c_st
            for v, a in relayed(i, tau).items():
                inflow[v] = inflow.get(v, 0) + a

        if factor is None or s == t:
            row = dict(inflow)
            for v, a in sensed.items():
                row[v] = row.get(v, 0) + a
            lp.add_constraint(row, "<=", budget)
            continue

        row = dict(inflow)
        for v, a in sensed.items():
            row[v] = row.get(v, 0) + factor * a
        lp.add_constraint(row, "<=", factor * budget)
        for tau in range(s, t + 1):
            cap = relayed(i, tau)
            for v, a in sensed.items():
                cap[v] = cap.get(v, 0) + a
            lp.add_constraint(cap, "<=", budget)

    return RateRegion(lp, rate_vars, flow_vars)


def _rates_from(inst: NetworkInstance, region: RateRegion, values: Dict[Hashable, Fraction]) -> RateMatrix:
    matrix = np.zeros((inst.nodes, inst.horizon))
    for key, value in values.items():
        if isinstance(key, tuple):
            matrix[key] = float(value)
        else:
            matrix[key, :] = float(value)
    return RateMatrix(values=matrix)


def _solve_or_raise(lp: LinearProgram, purpose: str) -> LPResult:
    result = simplex_solve(lp)
    if not result.optimal:
        raise InfeasibleProblemError(f"{purpose} LP is {result.status}")
    return result


def lexmax_reference(
    inst: NetworkInstance,
    setting: str,
    paths: Optional[RoutingPaths] = None,
) -> LexmaxResult:
    """Exact water-filling: raise the common level, then fix saturated rates."""
    region = build_rate_region(inst, setting, paths)
    keys = list(region.rate_vars)
    if len(keys) > settings.ORACLE_MAX_RATES:
        raise InstanceTooLargeError(
            f"exact oracle handles at most {settings.ORACLE_MAX_RATES} rates, instance has {len(keys)}"
        )

    fixed: Dict[Hashable, Fraction] = {}
    active = list(keys)
    solves = 0

    def held(lp: LinearProgram, level: Optional[Fraction] = None) -> None:
        for key, value in fixed.items():
            lp.add_constraint({region.rate_vars[key]: 1}, ">=", value)
        if level is not None:
            for key in active:
                lp.add_constraint({region.rate_vars[key]: 1}, ">=", level)

    try:
        while active:
            lp = region.lp.copy()
            level_var = lp.add_variable("level")
            for key in active:
                lp.add_constraint({region.rate_vars[key]: 1, level_var: -1}, ">=", 0)
            held(lp)
            lp.set_objective({level_var: 1})
            level = _solve_or_raise(lp, "common level").values[level_var]
            solves += 1

            screen = region.lp.copy()
            held(screen, level)
            screen.set_objective({region.rate_vars[key]: 1 for key in active})
            values = _solve_or_raise(screen, "screening").values
            solves += 1
            rising = {key for key in active if values[region.rate_vars[key]] > level}

            saturated = []
            for key in active:
                if key in rising:
                    continue
                candidate = region.lp.copy()
                held(candidate, level)
                candidate.set_objective({region.rate_vars[key]: 1})
                solves += 1
                if _solve_or_raise(candidate, "saturation").objective <= level:
                    saturated.append(key)

            if not saturated:
                raise InfeasibleProblemError(f"no rate saturates at level {level}")
            for key in saturated:
                fixed[key] = level
            active = [key for key in active if key not in fixed]
            logger.debug(f"Oracle level {level}: fixed {len(saturated)}, {len(active)} active")
    except Exception as e:
        logger.error(f"Error computing exact lexmax ({setting}): {str(e)}")
        raise

    repeats = inst.horizon if setting == "fractional-constant" else 1
    return LexmaxResult(
        setting=setting,
        exact=fixed,
        rates=_rates_from(inst, region, fixed),
        sorted_exact=sorted(fixed[key] for key in keys for _ in range(repeats)),
        lp_solves=solves,
    )


def max_throughput(
    inst: NetworkInstance,
    setting: str,
    paths: Optional[RoutingPaths] = None,
) -> ThroughputResult:
    """Rates maximizing the sum of all rates over the chosen region."""
    region = build_rate_region(inst, setting, paths)
    lp = region.lp.copy()
    lp.set_objective({var: 1 for var in region.rate_vars.values()})
    result = _solve_or_raise(lp, "throughput")
    exact = {key: result.values[var] for key, var in region.rate_vars.items()}
    return ThroughputResult(
        setting=setting,
        exact=exact,
        rates=_rates_from(inst, region, exact),
        objective=result.objective,
    )
