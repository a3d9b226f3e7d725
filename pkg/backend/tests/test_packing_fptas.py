import numpy as np
import pytest

from app.core.exceptions import InfeasibleProblemError
from app.models.network import FlowAssignment, NetworkInstance
from app.models.solver import ImprovePackingState
from app.services.core_model import check_feasible
from app.services.fixed_fractional import solve_fixed_fractional
from app.services.lp_oracle import lexmax_reference
from app.services.packing_fptas import (
    build_packing_system,
    compute_bounds,
    dual_and_costs,
    fixing_lp,
    improve_packing,
    maximize_rates_packing,
    min_cost_oracle,
    packing_accuracy,
    solve_fractional_fptas,
    solve_packing,
)
from app.services.scenario_io import random_instance

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

def _zero_state(inst, system):
    return ImprovePackingState(
        flows=np.zeros((len(inst.edges), inst.horizon)),
        inflow=np.zeros((inst.nodes, inst.horizon)),
        epsilon=system.epsilon,
        beta=0.0,
    )

def _source_mask(inst):
    mask = np.zeros((inst.nodes, inst.horizon), dtype=bool)
    mask[inst.sources] = True
    return mask

def _system(inst, trial, epsilon=0.05):
    mask = _source_mask(inst)
    previous = np.zeros((inst.nodes, inst.horizon))
    bounds = compute_bounds(inst, previous, mask)
    return build_packing_system(inst, bounds, previous, mask, trial, epsilon)

@pytest.fixture
def two_slot_relay():
    # a relays b in both slots; each slot fits alone but the pair overdraws a
    return NetworkInstance(
        nodes=3,
        sink=2,
        edges=[(1, 0), (0, 2)],
        T=2,
        B=2.0,
        initial_battery=[1.0, 2.0, 0.0],
        harvest=[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )

def test_row_count_is_one_per_window():
    # Arrange
    single = _one_node(1.0, [0.0, 0.0], 1.0)
    pair = random_instance(3, 3, seed=0)

    # Act
    small = _system(single, 0.0)
    large = _system(pair, 0.0)

    # Assert
    assert small.row_count == 3
    assert large.row_count == 12
    assert large.width == pytest.approx(3.0)

def test_packing_matrix_is_zero_one(two_slot_relay):
    # Arrange
    system = _system(two_slot_relay, 0.2)
    inflow = np.abs(np.random.default_rng(1).normal(size=(3, 2)))

    # Act
    matrix = system.matrix(3, 2)

    # Assert
    assert set(np.unique(matrix)) <= {0.0, 1.0}
    assert (matrix @ inflow.ravel() >= 0).all()
    assert system.loads(inflow) == pytest.approx(matrix @ inflow.ravel())

def test_duals_at_zero_are_inverse_capacities():
    # Arrange
    inst = _one_node(1.0, [0.5, 0.5], 2.0)
    system = _system(inst, 0.0)

    # Act
    duals, costs = dual_and_costs(_zero_state(inst, system), system)

    # Assert
    assert duals == pytest.approx(1.0 / system.rhs)
    y1, y2, y3 = duals
    assert costs[0, 0] == pytest.approx(y1 + y2)
    assert costs[0, 1] == pytest.approx(y2 + y3)
    assert costs[1].tolist() == [0.0, 0.0]

def test_lambda_max_examples():
    # Arrange
    stored = _one_node(1.0, [0.0], 1.0)
    harvesting = _one_node(0.0, [1.0, 1.0], 1.0)
    mask = np.array([[True, True], [False, False]])

    # Act
    first = compute_bounds(stored, np.zeros((2, 1)), mask[:, :1])
    second = compute_bounds(harvesting, np.zeros((2, 2)), mask)

    # Assert
    assert first.lambda_max == pytest.approx(1.0)
    assert second.lambda_max == pytest.approx(1.0)

def test_oracle_routes_supplies_per_slot(two_slot_relay):
    # Arrange
    system = _system(two_slot_relay, 0.2)
    costs = np.ones((3, 2))

    # Act
    flows, inflow, total = min_cost_oracle(two_slot_relay, system, costs)

    # Assert
    assert flows[0].tolist() == pytest.approx([0.2, 0.2])
    assert flows[1].tolist() == pytest.approx([0.4, 0.4])
    assert inflow[0].tolist() == pytest.approx([0.2, 0.2])
    assert total == pytest.approx(0.4)

def test_oracle_with_zero_supplies_is_free(relay):
    # Arrange
    system = _system(relay, 0.0)

    # Act
    flows, inflow, total = min_cost_oracle(relay, system, np.ones((3, 1)))

    # Assert
    assert not flows.any()
    assert not inflow.any()
    assert total == 0.0

def test_oracle_rejects_slot_over_capacity(relay):
    # Arrange
    system = _system(relay, 0.45)

    # Act / Assert
    with pytest.raises(InfeasibleProblemError) as exc_info:
        min_cost_oracle(relay, system, np.ones((3, 1)))
    assert "slot 0" in str(exc_info.value)

def test_improve_packing_accepts_point_under_target(relay):
    # Arrange
    system = _system(relay, 0.0)

    # Act
    outcome = improve_packing(relay, system, _zero_state(relay, system))

    # Assert
    assert outcome.accepted
    assert outcome.state.iterations == 0

def test_packing_starts_from_zero_cost_flow(relay):
    # Arrange
    system = _system(relay, 0.1)
    expected_flows, expected_inflow, _ = min_cost_oracle(relay, system, np.zeros((3, 1)))

    # Act
    outcome = solve_packing(relay, system)

    # Assert
    assert outcome.accepted
    assert outcome.state.iterations == 0
    assert outcome.state.inflow[0, 0] == pytest.approx(0.1)
    assert np.allclose(outcome.state.flows, expected_flows)
    assert np.allclose(outcome.state.inflow, expected_inflow)

def test_window_overdraw_yields_certificate(two_slot_relay):
    # Arrange
    system = _system(two_slot_relay, 0.3)

    # Act
    outcome = solve_packing(two_slot_relay, system)

    # Assert
    assert outcome.status == "infeasible"
    certificate = outcome.certificate
    assert (certificate >= 0).all()
    assert certificate @ system.loads(outcome.state.inflow) > certificate @ system.rhs

def test_relay_increment_reaches_exact_level(relay):
    # Arrange
    mask = np.zeros((3, 1), dtype=bool)
    mask[:2] = True

    # Act
    step = maximize_rates_packing(relay, np.zeros((3, 1)), mask, epsilon=0.05)

    # Assert
    assert 0.95 / 3 <= step.increment <= 1 / 3 + 1e-9
    assert step.inflow[0, 0] == pytest.approx(step.increment)

def test_fixing_lp_fixes_saturated_relay(relay):
    # Arrange
    mask = np.zeros((3, 1), dtype=bool)
    mask[:2] = True

    # Act
    outcome = fixing_lp(relay, np.zeros((3, 1)), mask, 0.33, epsilon=0.1)

    # Assert
    assert outcome.newly_fixed == 2
    assert not outcome.mask.any()

def test_single_node_rate_is_scaled_down():
    # Arrange
    inst = _one_node(1.0, [0.0], 1.0)

    # Act
    result = solve_fractional_fptas(inst, epsilon=0.1)

    # Assert
    assert 0.9 <= result.rates.values[0, 0] <= 1.0
    assert result.rates.values[0, 0] == pytest.approx(1.0 / (1.0 + packing_accuracy(0.1)), abs=1e-5)

def test_relay_rates_are_feasible(relay):
    # Act
    result = solve_fractional_fptas(relay, epsilon=0.1)

    # Assert
    assert 0.3 <= result.rates.values[:2].min() <= 0.3334
    assert check_feasible(relay, result.rates, result.flows, tol=1e-6).feasible
    assert len(result.iterations) <= relay.nodes * relay.horizon

def test_rejects_epsilon_outside_unit_interval(relay):
    # Act / Assert
    with pytest.raises(ValueError) as exc_info:
        solve_fractional_fptas(relay, epsilon=1.5)
    assert "epsilon must lie in (0, 1)" in str(exc_info.value)

def test_time_variable_routing_beats_fixed_on_alternating_gateways(alternating5):
    # Arrange
    relayed = list(range(2, 7))

    # Act
    variable = solve_fractional_fptas(alternating5, epsilon=0.1)
    fixed = solve_fixed_fractional(alternating5)

    # Assert
    assert check_feasible(alternating5, variable.rates, variable.flows, tol=1e-6).feasible
    assert fixed.rates.values[relayed].min() == pytest.approx(1 / 12, abs=1e-6)
    assert variable.rates.values[relayed].min() / fixed.rates.values[relayed].min() >= 1.5

@pytest.mark.parametrize("epsilon", [0.05, 0.1, 0.2])
def test_rates_within_accuracy_of_oracle(seeded_instances, epsilon):
    for _, inst in seeded_instances(50, 5, 3):
        # Act
        result = solve_fractional_fptas(inst, epsilon=epsilon)
        exact = lexmax_reference(inst, "fractional-timevar")

        # Assert
        expected = np.array([float(v) for v in exact.sorted_exact])
        assert (result.rates.sorted_vector(inst) >= (1.0 - epsilon) * expected - 1e-6).all()
        assert check_feasible(inst, result.rates, result.flows, tol=1e-6).feasible
        assert len(result.iterations) <= inst.nodes * inst.horizon

def _assert_in_polytope(inst, system, flows, inflow):
    assignment = FlowAssignment(values=flows)
    relayed = assignment.inflow(inst)
    balance = assignment.outflow(inst) - relayed
    sources = inst.sources
    assert (flows >= -1e-12).all()
    assert balance[sources] == pytest.approx(system.supplies[sources], abs=1e-7)
    assert (relayed[sources] <= system.caps[sources] + 1e-9).all()
    assert inflow[sources] == pytest.approx(relayed[sources], abs=1e-12)

def test_sampled_points_respect_width(seeded_instances):
    rng = np.random.default_rng(23)
    sampled = 0

    for _, inst in seeded_instances(30, 5, 3):
        for share in (0.1, 0.5):
            # Arrange
            bounds = compute_bounds(inst, np.zeros((inst.nodes, inst.horizon)), _source_mask(inst))
            system = _system(inst, share * bounds.lambda_max)
            try:
                points = [
                    min_cost_oracle(inst, system, rng.uniform(0.0, 1.0, size=(inst.nodes, inst.horizon)))
                    for _ in range(3)
                ]
            except InfeasibleProblemError:
                continue

            # Act
            weights = rng.dirichlet(np.ones(len(points)))
            flows = sum(w * p[0] for w, p in zip(weights, points))
            inflow = sum(w * p[1] for w, p in zip(weights, points))
            active = system.active_rows
            ratios = system.loads(inflow)[active] / system.rhs[active]

            # Assert
            _assert_in_polytope(inst, system, flows, inflow)
            assert ratios.max(initial=0.0) <= system.width + 1e-9
            assert system.width == inst.horizon
            sampled += 1

    assert sampled > 0

def test_costs_match_row_by_row_sums(seeded_instances):
    rng = np.random.default_rng(29)

    for _, inst in seeded_instances(30, 5, 3):
        # Arrange
        system = _system(inst, 0.0)
        active = system.active_rows
        if not active.any():
            continue
        inflow = rng.uniform(0.0, 1.0, size=(inst.nodes, inst.horizon)) * system.rhs[active].min()
        inflow[inst.sink] = 0.0
        state = _zero_state(inst, system).model_copy(update={"inflow": inflow, "alpha": float(rng.uniform(0.0, 2.0))})

        # Act
        duals, costs = dual_and_costs(state, system)

        # Assert
        loads = system.loads(inflow)
        expected_costs = np.zeros((inst.nodes, inst.horizon))
        for r in range(system.row_count):
            if not active[r]:
                assert duals[r] == 0.0
                continue
            assert duals[r] == pytest.approx(np.exp(state.alpha * loads[r] / system.rhs[r]) / system.rhs[r], rel=1e-9)
            node = system.row_node[r]
            expected_costs[node, system.row_start[r]:system.row_end[r] + 1] += duals[r]
        assert costs == pytest.approx(expected_costs, rel=1e-9)

@pytest.fixture
def two_slot_diamond():
    # c can reach the sink through a or b; each relay affords one slot of c's traffic
    return NetworkInstance(
        nodes=4,
        sink=3,
        edges=[(2, 0), (2, 1), (0, 3), (1, 3)],
        T=2,
        B=2.0,
        initial_battery=[1.0, 1.0, 2.0, 0.0],
        harvest=[[0.0, 0.0]] * 4,
        c_s=0.0,
        c_tx=1.0,
        c_rx=0.0,
    )

def test_improve_steps_stay_inside_the_flow_polytope(two_slot_diamond):
    # Arrange
    inst = two_slot_diamond
    system = _system(inst, 0.3)
    flows = np.zeros((len(inst.edges), inst.horizon))
    for edge, amount in (((2, 0), 0.3), ((0, 3), 0.6), ((1, 3), 0.3)):
        flows[inst.edge_index[edge]] = amount
    inflow = np.zeros((inst.nodes, inst.horizon))
    inflow[0] = 0.3
    start = ImprovePackingState(flows=flows, inflow=inflow, epsilon=system.epsilon, beta=0.0)
    _assert_in_polytope(inst, system, flows, inflow)

    # Act
    outcome = improve_packing(inst, system, start)

    # Assert
    assert outcome.state.beta0 == pytest.approx(1.5)
    assert outcome.state.iterations >= 1
    assert outcome.state.beta < 1.5
    _assert_in_polytope(inst, system, outcome.state.flows, outcome.state.inflow)
