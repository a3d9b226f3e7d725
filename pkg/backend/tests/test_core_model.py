import numpy as np
import pytest

from app.core.exceptions import DimensionMismatchError
from app.models.network import FlowAssignment, NetworkInstance, RateMatrix, RoutingPaths
from app.services.core_model import (
    battery_levels,
    check_feasible,
    consumption_matrix,
    descendant_counts,
    is_routing_tree,
    lex_compare,
    linearized_battery_slack,
    paths_to_flows,
    simulate_batteries,
    sorted_rate_vector,
    validate_instance,
    validate_paths,
)
from app.services.fixed_fractional import solve_fixed_fractional
from app.services.scenario_io import random_paths

def _one_node(initial, harvest, capacity):
    return NetworkInstance(
        nodes=2,
        sink=1,
        edges=[(0, 1)],
        T=len(harvest),
        B=capacity,
        initial_battery=[initial, 0.0],
        harvest=[list(harvest), [0.0] * len(harvest)],
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )

def test_battery_levels_cap_at_capacity():
    # Arrange
    harvest = np.array([2.0, 0.0])

    # Act
    levels = battery_levels(0.0, harvest, np.array([0.5, 0.5]), 1.0)

    # Assert
    assert levels.shape == (3,)
    assert levels[1] == pytest.approx(1.0)
    assert levels[2] == pytest.approx(0.5)

def test_simulate_relay_at_fair_rates(relay, relay_routing):
    # Arrange
    rates = RateMatrix(values=[[1 / 3], [1 / 3], [0.0]])
    flows = paths_to_flows(relay, relay_routing, rates)

    # Act
    trace = simulate_batteries(relay, rates, flows)

    # Assert
    assert trace.levels.shape == (3, 2)
    assert trace.levels[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert trace.levels[1, 1] == pytest.approx(2.0 - 1 / 3)

def test_simulate_rejects_wrong_shape(relay):
    # Arrange
    rates = RateMatrix(values=np.zeros((2, 1)))

    # Act / Assert
    with pytest.raises(DimensionMismatchError) as exc_info:
        simulate_batteries(relay, rates, FlowAssignment.zeros(relay))
    assert "rates must be 3x1" in str(exc_info.value)

def test_sink_consumes_nothing(relay, relay_routing):
    # Arrange
    rates = RateMatrix(values=[[0.2], [0.1], [0.0]])
    flows = paths_to_flows(relay, relay_routing, rates)

    # Act
    consumption = consumption_matrix(relay, rates, flows)

    # Assert
    assert consumption[2, 0] == 0.0
    assert consumption[0, 0] == pytest.approx(0.2 + 2 * 0.1)

def test_check_feasible_reports_overdraw(relay, relay_routing):
    # Arrange
    rates = RateMatrix(values=[[0.5], [0.5], [0.0]])
    flows = paths_to_flows(relay, relay_routing, rates)

    # Act
    report = check_feasible(relay, rates, flows)

    # Assert
    assert not report.feasible
    assert report.min_battery < 0
    assert any("battery" in v for v in report.violations)

def test_check_feasible_reports_conservation(relay):
    # Arrange
    rates = RateMatrix(values=[[0.1], [0.1], [0.0]])
    flows = FlowAssignment(values=[[0.0], [0.1]])

    # Act
    report = check_feasible(relay, rates, flows)

    # Assert
    assert not report.feasible
    assert report.max_conservation_residual == pytest.approx(0.1)

def test_validate_instance_lists_violations():
    # Arrange
    inst = NetworkInstance(
        nodes=3,
        sink=2,
        edges=[(0, 2)],
        T=1,
        B=1.0,
        initial_battery=[2.0, 0.0, 0.0],
        harvest=[[-1.0], [0.0], [0.0]],
        c_s=0.0,
        c_tx=0.0,
        c_rx=0.0,
    )

    # Act
    report = validate_instance(inst)

    # Assert
    assert not report.ok
    text = " | ".join(report.violations)
    assert "unreachable: node 1" in text
    assert "negative energy" in text
    assert "initial_battery[0]" in text
    assert "c_st must be positive" in text

def test_instance_shape_errors_name_the_field():
    # Act / Assert
    with pytest.raises(ValueError) as exc_info:
        NetworkInstance(
            nodes=2,
            sink=1,
            edges=[(0, 1)],
            T=2,
            B=1.0,
            initial_battery=[0.0, 0.0],
            harvest=[[0.0], [0.0]],
            c_s=0.0,
            c_tx=1.0,
            c_rx=0.0,
        )
    assert "harvest row 0" in str(exc_info.value)

def test_validate_paths_rejects_missing_edge(relay):
    # Arrange
    paths = RoutingPaths.from_node_paths([[0, 2], [1, 2], []])

    # Act
    report = validate_paths(relay, paths)

    # Assert
    assert not report.ok
    assert "missing edge (1, 2)" in report.violations[0]

def test_routing_tree_detection(balanced3, balanced3_paths, balanced3_tree):
    # Act / Assert
    assert is_routing_tree(balanced3, balanced3_tree)
    assert not is_routing_tree(balanced3, balanced3_paths)

def test_descendant_counts_follow_paths(chain, chain_paths):
    # Arrange
    mask = np.zeros((4, 2), dtype=bool)
    mask[:3] = True

    # Act
    counts = descendant_counts(chain_paths, mask)

    # Assert
    assert counts[0].tolist() == [2, 2]
    assert counts[1].tolist() == [1, 1]
    assert counts[2].tolist() == [0, 0]

def test_linearized_slack_matches_simulation():
    # Arrange
    rng = np.random.default_rng(11)

    for _ in range(50):
        T = int(rng.integers(1, 5))
        harvest = np.round(rng.uniform(0, 1, size=T), 2)
        inst = _one_node(float(np.round(rng.uniform(0, 1), 2)), harvest, 1.0)
        drain = np.zeros((2, T))
        drain[0] = rng.uniform(0, 1.2, size=T)

        # Act
        levels = battery_levels(inst.initial_array, inst.harvest_array, drain, 1.0)
        slack = linearized_battery_slack(inst, drain)

        # Assert
        assert (levels[0, 1:].min() >= -1e-12) == (slack >= -1e-12)

def test_lex_compare_orders_sorted_vectors(relay):
    # Arrange
    fair = sorted_rate_vector(relay, RateMatrix(values=[[1 / 3], [1 / 3], [0.0]]))
    greedy = sorted_rate_vector(relay, RateMatrix(values=[[1.0], [0.0], [0.0]]))

    # Act / Assert
    assert lex_compare(fair, greedy) == 1
    assert lex_compare(greedy, fair) == -1
    assert lex_compare(fair, fair) == 0

def test_descendant_counts_grow_with_the_mask(seeded_instances):
    rng = np.random.default_rng(31)

    for seed, inst in seeded_instances(30, 6, 4):
        # Arrange
        paths = random_paths(inst, seed=seed)
        larger = rng.random((inst.nodes, inst.horizon)) < 0.7
        larger[inst.sink] = False
        smaller = larger & (rng.random((inst.nodes, inst.horizon)) < 0.5)

        # Act
        few = descendant_counts(paths, smaller)
        many = descendant_counts(paths, larger)

        # Assert
        assert (few <= many).all()
        assert (few >= 0).all()

def test_sink_inflow_equals_total_rate(seeded_instances):
    rng = np.random.default_rng(37)

    for seed, inst in seeded_instances(20, 5, 3):
        # Arrange
        values = rng.uniform(0.0, 0.5, size=(inst.nodes, inst.horizon))
        values[inst.sink] = 0.0
        rates = RateMatrix(values=values)

        # Act
        unsplittable = paths_to_flows(inst, random_paths(inst, seed=seed), rates)
        fractional = solve_fixed_fractional(inst)

        # Assert
        assert unsplittable.inflow(inst)[inst.sink] == pytest.approx(values.sum(axis=0))
        assert fractional.flows.inflow(inst)[inst.sink] == pytest.approx(
            fractional.rates.values[inst.sources].sum(axis=0), abs=1e-6
        )

def test_all_zero_rates_are_feasible(seeded_instances):
    for _, inst in seeded_instances(50, 6, 4):
        # Act
        report = check_feasible(inst, RateMatrix.zeros(inst), FlowAssignment.zeros(inst))

        # Assert
        assert validate_instance(inst).ok
        assert report.feasible, report.violations
