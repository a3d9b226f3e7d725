import numpy as np
import pytest

from app.core.exceptions import InstanceTooLargeError
from app.models.network import RateMatrix
from app.services.core_model import check_feasible, is_routing_tree, paths_to_flows, validate_paths
from app.services.routing_search import enumerate_routings, maxmin_unsplittable_routing
from app.services.scenario_io import random_instance

def _common_rates(inst, rate):
    values = np.zeros((inst.nodes, inst.horizon))
    values[inst.sources] = rate
    return RateMatrix(values=values)

def test_single_node_uses_its_whole_drain(single_node):
    # Act
    result = maxmin_unsplittable_routing(single_node)

    # Assert
    assert result.rate == pytest.approx(1.0)
    assert result.paths.path(0, 0) == [0, 1]

def test_balanced_routing_spreads_relays(balanced3):
    # Act
    result = maxmin_unsplittable_routing(balanced3)

    # Assert
    assert result.rate == pytest.approx(0.5, abs=1e-9)
    assert validate_paths(balanced3, result.paths).ok
    gateways = [result.paths.path(i, 0)[-2] for i in range(3, 6)]
    assert sorted(gateways) == [0, 1, 2]
    assert result.decomposition.unit == pytest.approx(0.5, abs=1e-9)

def test_star_shares_the_single_relay(star):
    # Act
    result = maxmin_unsplittable_routing(star)

    # Assert
    assert result.rate == pytest.approx(1 / 3, abs=1e-7)
    assert result.capacity_counts[0] == 2

def test_found_routing_is_feasible_at_common_rate(seeded_instances):
    for _, inst in seeded_instances(30, 6, 3):
        # Act
        result = maxmin_unsplittable_routing(inst)
        rates = _common_rates(inst, result.rate)
        report = check_feasible(inst, rates, paths_to_flows(inst, result.paths, rates), tol=1e-6)

        # Assert
        assert report.feasible, report.violations

def test_enumerate_trees_on_balanced(balanced3):
    # Act
    result = enumerate_routings(balanced3, mode="tree")

    # Assert
    assert result.candidates == 3
    assert is_routing_tree(balanced3, result.paths)
    assert result.sorted_rates == pytest.approx([0.25] * 4 + [1.0] * 2, abs=1e-7)

def test_enumerate_unsplittable_on_balanced(balanced3):
    # Act
    result = enumerate_routings(balanced3, mode="unsplittable")

    # Assert
    assert result.candidates == 27
    assert result.sorted_rates == pytest.approx([0.5] * 6, abs=1e-7)

def test_common_rate_matches_best_enumerated_minimum(seeded_instances):
    for _, inst in seeded_instances(50, 5, 3):
        # Act
        search = maxmin_unsplittable_routing(inst)
        best = enumerate_routings(inst, mode="unsplittable")

        # Assert
        assert search.rate == pytest.approx(best.sorted_rates[0], abs=1e-6)

def test_enumeration_guards_instance_size():
    # Arrange
    inst = random_instance(8, 1, seed=0)

    # Act / Assert
    with pytest.raises(InstanceTooLargeError) as exc_info:
        enumerate_routings(inst)
    assert "at most 6 sensor nodes" in str(exc_info.value)

def test_enumeration_rejects_unknown_mode(relay):
    # Act / Assert
    with pytest.raises(ValueError) as exc_info:
        enumerate_routings(relay, mode="fractional")
    assert "mode must be one of" in str(exc_info.value)
