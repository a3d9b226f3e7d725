import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import ValidationError

from app.core.exceptions import InvalidInstanceError, InvalidPathsError, ScenarioParseError
from app.models.network import NetworkInstance, RoutingPaths
from app.services.core_model import validate_instance, validate_paths

logger = logging.getLogger(__name__)

GENERATOR_ALIASES = {"fig2": "relay", "fig4": "balanced", "fig5": "alternating"}
GENERATOR_KINDS = ("relay", "balanced", "alternating", "random") + tuple(GENERATOR_ALIASES)

PathLike = Union[str, Path]


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "scenario"
        parts.append(f"{field}: {item['msg']}")
    return "; ".join(parts)


def _load_json(path: PathLike) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path}: scenario must be a JSON object")
    return data


def parse_paths(data: object, source: str = "paths") -> RoutingPaths:
    try:
        return RoutingPaths.model_validate(data)
    except ValidationError as e:
        raise ScenarioParseError(f"{source}: {_describe(e)}") from e


def parse_scenario(path: PathLike) -> Tuple[NetworkInstance, Optional[RoutingPaths]]:
    """Read a scenario file into a validated instance and its optional paths."""
    data = _load_json(path)
    raw_paths = data.pop("paths", None)
    try:
        inst = NetworkInstance.model_validate(data)
    except ValidationError as e:
        raise ScenarioParseError(f"{path}: {_describe(e)}") from e

    report = validate_instance(inst)
    if not report.ok:
        raise InvalidInstanceError(report.violations)

    paths = None
    if raw_paths is not None:
        paths = parse_paths(raw_paths, f"{path}: paths")
        check = validate_paths(inst, paths)
        if not check.ok:
            raise InvalidPathsError(check.violations)
    logger.info(f"Loaded scenario {path}: {inst.nodes} nodes, {len(inst.edges)} edges, T={inst.horizon}")
    return inst, paths


def load_paths(path: PathLike, inst: NetworkInstance) -> RoutingPaths:
    """Read a standalone paths file (a scenario's `paths` object) for an instance."""
    data = _load_json(path)
    paths = parse_paths(data.get("paths", data), str(path))
    check = validate_paths(inst, paths)
    if not check.ok:
        raise InvalidPathsError(check.violations)
    return paths


def scenario_document(inst: NetworkInstance, paths: Optional[RoutingPaths] = None) -> dict:
    document = inst.model_dump(by_alias=True)
    document["edges"] = [list(edge) for edge in inst.edges]
    if paths is not None:
        document["paths"] = paths.model_dump()
    return document


def write_scenario(path: PathLike, inst: NetworkInstance, paths: Optional[RoutingPaths] = None) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(scenario_document(inst, paths), handle, indent=2)
        handle.write("\n")


def write_paths(path: PathLike, paths: RoutingPaths) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"paths": paths.model_dump()}, handle, indent=2)
        handle.write("\n")


def relay_instance(c_s: float = 0.0, c_tx: float = 1.0, c_rx: float = 1.0) -> NetworkInstance:
    """Node b can only reach the sink through node a; a holds 1 unit, b holds 2."""
    return NetworkInstance(
        nodes=3,
        sink=2,
        edges=[(1, 0), (0, 2)],
        T=1,
        B=2.0,
        initial_battery=[1.0, 2.0, 0.0],
        harvest=[[0.0], [0.0], [0.0]],
        c_s=c_s,
        c_tx=c_tx,
        c_rx=c_rx,
    )


def relay_paths() -> RoutingPaths:
    return RoutingPaths.from_node_paths([[0, 2], [1, 0, 2], []])


def balanced_instance(k: int) -> NetworkInstance:
    """k gateways a_1..a_k with unit energy behind one well-charged relay b.

    Node ids: a_i = i - 1, b = k, c_i = k + i, sink = 2k.
    """
    if k < 2:
        raise InvalidInstanceError([f"balanced family needs k >= 2, got {k}"])
    b, sink = k, 2 * k
    edges = [(k + i, b) for i in range(1, k)]
    edges += [(b, a) for a in range(k)]
    edges += [(a, sink) for a in range(k)]
    initial = [1.0] * k + [float(2 * k)] * k + [0.0]
    return NetworkInstance(
        nodes=2 * k + 1,
        sink=sink,
        edges=edges,
        T=1,
        B=float(2 * k),
        initial_battery=initial,
        harvest=[[0.0] for _ in range(2 * k + 1)],
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )


def balanced_paths(k: int, tree: bool = False) -> RoutingPaths:
    """One c node per gateway (b takes the last one), or everything through a_1."""
    b, sink = k, 2 * k
    node_paths: List[List[int]] = [[] for _ in range(2 * k + 1)]
    for a in range(k):
        node_paths[a] = [a, sink]
    node_paths[b] = [b, 0, sink] if tree else [b, k - 1, sink]
    for i in range(1, k):
        gateway = 0 if tree else i - 1
        node_paths[k + i] = [k + i, b, gateway, sink]
    return RoutingPaths.from_node_paths(node_paths)


def alternating_instance(k: int, horizon: int = 4) -> NetworkInstance:
    """Two gateways harvesting in alternate slots behind a relay b and k - 1 leaves.

    Node ids: a_1 = 0, a_2 = 1, b = 2, c_i = 2 + i, sink = k + 2.
    """
    if k < 2:
        raise InvalidInstanceError([f"alternating family needs k >= 2, got {k}"])
    if horizon < 2:
        raise InvalidInstanceError([f"alternating family needs a horizon of at least 2, got {horizon}"])
    b, sink = 2, k + 2
    nodes = k + 3
    edges = [(2 + i, b) for i in range(1, k)]
    edges += [(b, 0), (b, 1), (0, sink), (1, sink)]
    plenty = float(2 * k + 2)
    harvest = [[float(t % 2 == 0) for t in range(horizon)], [float(t % 2 == 1) for t in range(horizon)]]
    harvest += [[plenty] * horizon for _ in range(k)]
    harvest.append([0.0] * horizon)
    return NetworkInstance(
        nodes=nodes,
        sink=sink,
        edges=edges,
        T=horizon,
        B=1.0,
        initial_battery=[0.0] * nodes,
        harvest=harvest,
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )


def random_instance(n: int, T: int, seed: int) -> NetworkInstance:
    """Seeded instance whose sink (node n - 1) is reachable from every node."""
    if n < 2 or T < 1:
        raise InvalidInstanceError([f"random instances need n >= 2 and T >= 1, got n={n}, T={T}"])
    rng = np.random.default_rng(seed)
    sink = n - 1
    edges = set()
    for i in range(n - 1):
        edges.add((i, int(rng.integers(i + 1, n))))
    for i in range(n - 1):
        for j in range(n):
            if i != j and rng.random() < 0.25:
                edges.add((i, j))

    capacity = round(float(rng.uniform(1.0, 3.0)), 2)
    initial = [round(float(x), 2) for x in rng.uniform(0.0, capacity, size=n)]
    harvest = np.round(rng.uniform(0.0, capacity, size=(n, T)), 2)
    initial[sink] = 0.0
    harvest[sink] = 0.0
    return NetworkInstance(
        nodes=n,
        sink=sink,
        edges=sorted(edges),
        T=T,
        B=capacity,
        initial_battery=initial,
        harvest=harvest.tolist(),
        c_s=round(float(rng.uniform(0.0, 0.5)), 2),
        c_tx=round(float(rng.uniform(0.5, 1.5)), 2),
        c_rx=round(float(rng.uniform(0.2, 1.0)), 2),
    )


def random_paths(inst: NetworkInstance, seed: int) -> RoutingPaths:
    """Seeded time-variable unsplittable routing: a random walk toward the sink per node and slot."""
    rng = np.random.default_rng(seed)
    distance = nx.shortest_path_length(inst.graph.reverse(copy=False), inst.sink)
    per_node: List[List[List[int]]] = [[] for _ in range(inst.nodes)]
    for i in inst.sources:
        for _ in range(inst.horizon):
            path = [i]
            while path[-1] != inst.sink:
                here = path[-1]
                closer = [j for j in inst.graph.successors(here) if distance.get(j, np.inf) < distance[here]]
                path.append(closer[int(rng.integers(len(closer)))])
            per_node[i].append(path)
    return RoutingPaths(time_invariable=False, paths=per_node)


def generate_instance(
    kind: str,
    k: int = 3,
    n: int = 5,
    T: int = 3,
    seed: int = 0,
    horizon: int = 4,
) -> NetworkInstance:
    """Deterministic fixture of one of the generator families."""
    kind = GENERATOR_ALIASES.get(kind, kind)
    if kind == "relay":
        return relay_instance()
    if kind == "balanced":
        return balanced_instance(k)
    if kind == "alternating":
        return alternating_instance(k, horizon)
    if kind == "random":
        return random_instance(n, T, seed)
    raise InvalidInstanceError([f"unknown generator kind {kind!r}; choose one of {', '.join(GENERATOR_KINDS)}"])


def canonical_paths(kind: str, k: int = 3, tree: bool = False) -> Optional[RoutingPaths]:
    kind = GENERATOR_ALIASES.get(kind, kind)
    if kind == "relay":
        return relay_paths()
    if kind == "balanced":
        return balanced_paths(k, tree=tree)
    return None
