import numpy as np
import pytest

from app.models.network import NetworkInstance, RoutingPaths
from app.services.scenario_io import (
    alternating_instance,
    balanced_instance,
    balanced_paths,
    random_instance,
    relay_instance,
    relay_paths,
)

@pytest.fixture
def relay():
    return relay_instance()

@pytest.fixture
def relay_routing():
    return relay_paths()

@pytest.fixture
def balanced3():
    return balanced_instance(3)

@pytest.fixture
def balanced3_paths():
    return balanced_paths(3)

@pytest.fixture
def balanced3_tree():
    return balanced_paths(3, tree=True)

@pytest.fixture
def alternating5():
    return alternating_instance(5, horizon=2)

@pytest.fixture
def single_node():
    # node 0 sends straight to the sink with one unit of stored energy
    return NetworkInstance(
        nodes=2,
        sink=1,
        edges=[(0, 1)],
        T=1,
        B=1.0,
        initial_battery=[1.0, 0.0],
        harvest=[[0.0], [0.0]],
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )

@pytest.fixture
def chain():
    # c -> b -> a -> sink with a two-slot horizon
    return NetworkInstance(
        nodes=4,
        sink=3,
        edges=[(2, 1), (1, 0), (0, 3)],
        T=2,
        B=2.0,
        initial_battery=[1.0, 2.0, 2.0, 0.0],
        harvest=[[0.5, 0.5], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )

@pytest.fixture
def chain_paths():
    return RoutingPaths.from_node_paths([[0, 3], [1, 0, 3], [2, 1, 0, 3], []])

@pytest.fixture
def diamond():
    # c splits between the relays a and b, which reach the sink directly
    return NetworkInstance(
        nodes=4,
        sink=3,
        edges=[(2, 0), (2, 1), (0, 3), (1, 3)],
        T=1,
        B=3.0,
        initial_battery=[1.0, 1.0, 3.0, 0.0],
        harvest=[[0.0], [0.0], [0.0], [0.0]],
        c_s=0.5,
        c_tx=0.5,
        c_rx=0.5,
    )

@pytest.fixture
def star():
    # two leaves with ample energy behind one relay holding a single unit
    return NetworkInstance(
        nodes=4,
        sink=3,
        edges=[(1, 0), (2, 0), (0, 3)],
        T=1,
        B=10.0,
        initial_battery=[1.0, 10.0, 10.0, 0.0],
        harvest=[[0.0], [0.0], [0.0], [0.0]],
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )

@pytest.fixture
def seeded_instances():
    """Factory of (seed, instance) pairs with at most max_nodes nodes and max_horizon slots."""
    def build(count, max_nodes, max_horizon):
        cases = []
        for seed in range(count):
            rng = np.random.default_rng(1000 + seed)
            n = int(rng.integers(2, max_nodes + 1))
            T = int(rng.integers(1, max_horizon + 1))
            cases.append((seed, random_instance(n, T, seed=seed)))
        return cases
    return build
