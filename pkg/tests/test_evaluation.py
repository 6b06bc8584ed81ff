import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betweenride.errors import CyclicPolicy, NotAPath, Unreachable
from betweenride.evaluation import (
    baseline_values,
    best_stay_node,
    brute_force_values,
    compare_with_baseline,
    fastest_path,
    fixed_policy_value,
    policy_route,
    relative_improvement,
    shortest_route_baseline,
    simulate_policy,
    survival_along_route,
)
from betweenride.network import EdgeParams, RoadEdge, RoadNode, build_network, stay_value
from betweenride.solver import STAY, STOP, GotoNode, Policy, solve
from betweenride.synthetic import random_driver, random_network
from betweenride.preprocess import enforce_local_maxima

from instances import E_NEG_02, E_NEG_04, TWO_NODE_A, WAGE, fig2_diamond, node, rel_close, road, three_line, two_node


def instance(seed, n):
    rng = np.random.default_rng(seed)
    params = random_driver(rng)
    net, _ = enforce_local_maxima(random_network(rng, n), params)
    return net, params


instances = st.builds(instance, st.integers(0, 2**32 - 1), st.integers(1, 8))


class TestBruteForce:
    def test_horizon_zero_is_stay_or_stop(self):
        net = fig2_diamond()
        assert brute_force_values(net, WAGE, 0) == [1.0, 1.0, 8.0, 9.0]

    def test_two_node(self):
        v = brute_force_values(two_node(), WAGE, 2)
        assert v[0] == pytest.approx(TWO_NODE_A, rel=1e-14)
        assert v[1] == pytest.approx(9.0, rel=1e-14)

    def test_converges_by_n(self):
        net = fig2_diamond()
        assert brute_force_values(net, WAGE, net.n) == brute_force_values(net, WAGE, net.n + 5)

    def test_negative_horizon(self):
        with pytest.raises(ValueError):
            brute_force_values(two_node(), WAGE, -1)


class TestFixedPolicyValue:
    def test_all_stay(self):
        net = fig2_diamond()
        policy = Policy((0.0,) * 4, (STAY,) * 4)
        assert fixed_policy_value(net, WAGE, policy) == [stay_value(nd, WAGE) for nd in net.nodes]

    def test_all_stop(self):
        assert fixed_policy_value(fig2_diamond(), WAGE, Policy((0.0,) * 4, (STOP,) * 4)) == [0.0] * 4

    def test_optimal_two_node(self):
        policy, _ = solve(two_node(), WAGE)
        v = fixed_policy_value(two_node(), WAGE, policy)
        assert v[0] == pytest.approx(TWO_NODE_A, rel=1e-14)

    def test_suboptimal_plan(self):
        # A drives to B but B stops: only the ride on the edge earns anything
        policy = Policy((0.0, 0.0), (GotoNode(1), STOP))
        v = fixed_policy_value(two_node(), WAGE, policy)
        assert v[0] == pytest.approx(4.0 * (1 - E_NEG_02), rel=1e-14)

    def test_cycle(self):
        net = fig2_diamond()
        policy = Policy((0.0,) * 4, (GotoNode(1), GotoNode(0), STAY, STAY))
        with pytest.raises(CyclicPolicy) as info:
            fixed_policy_value(net, WAGE, policy)
        assert info.value.cycle == (0, 1)

    def test_missing_edge(self):
        net = two_node()
        with pytest.raises(NotAPath):
            fixed_policy_value(net, WAGE, Policy((0.0, 0.0), (STAY, GotoNode(0))))


class TestSimulation:
    def test_stop_is_exactly_zero(self):
        net = two_node()
        stats = simulate_policy(net, WAGE, Policy((0.0, 0.0), (STOP, STOP)), 0, 1000, seed=1)
        assert stats.mean_profit == 0.0 and stats.std_error == 0.0
        assert stats.match_rate == 0.0

    def test_single_stay(self):
        net = build_network([RoadNode(0, 0.0, 0.0, EdgeParams.wait(1.0, 9.6))], [])
        stats = simulate_policy(net, WAGE, Policy((9.0,), (STAY,)), 0, 100_000, seed=7)
        assert abs(stats.mean_profit - 9.0) <= 3 * stats.std_error
        assert stats.match_rate == 1.0
        assert stats.mean_time_to_match == pytest.approx(1.0, rel=0.02)

    def test_two_node(self):
        net = two_node()
        policy, _ = solve(net, WAGE)
        stats = simulate_policy(net, WAGE, policy, 0, 100_000, seed=11)
        assert abs(stats.mean_profit - TWO_NODE_A) <= 3 * stats.std_error

    def test_deterministic_and_worker_independent(self):
        net = fig2_diamond()
        policy, _ = solve(net, WAGE)
        a = simulate_policy(net, WAGE, policy, 0, 40_000, seed=3)
        b = simulate_policy(net, WAGE, policy, 0, 40_000, seed=3)
        c = simulate_policy(net, WAGE, policy, 0, 40_000, seed=3, workers=4)
        assert a == b == c
        d = simulate_policy(net, WAGE, policy, 0, 40_000, seed=4)
        assert d.mean_profit != a.mean_profit

    def test_rejects_cycles_and_bad_counts(self):
        net = fig2_diamond()
        with pytest.raises(CyclicPolicy):
            simulate_policy(net, WAGE, Policy((0.0,) * 4, (GotoNode(1), GotoNode(0), STAY, STAY)), 0, 10, 0)
        with pytest.raises(ValueError):
            simulate_policy(net, WAGE, Policy((0.0,) * 4, (STOP,) * 4), 0, 0, 0)


class TestSurvival:
    def test_single_node(self):
        assert survival_along_route(two_node(), [0]) == [1.0]

    def test_half(self):
        ep = EdgeParams(1.0, 1.0, math.log(2), 100.0, 100.0 * math.log(2))
        net = build_network([node(0, 2.0), node(1, 2.0)], [RoadEdge(0, 1, ep)])
        assert survival_along_route(net, [0, 1]) == pytest.approx([1.0, 0.5], rel=1e-15)

    def test_two_hops(self):
        net = build_network(
            [node(0, 2.0), node(1, 2.0), node(2, 2.0)],
            [RoadEdge(0, 1, road(0.1, 10.0, 2.0)), RoadEdge(1, 2, road(0.1, 10.0, 2.0))],
        )
        assert survival_along_route(net, [0, 1, 2]) == pytest.approx([1.0, E_NEG_02, E_NEG_04], rel=1e-15)

    def test_not_a_path(self):
        with pytest.raises(NotAPath):
            survival_along_route(two_node(), [1, 0])
        with pytest.raises(NotAPath):
            survival_along_route(two_node(), [])

    @settings(max_examples=40, deadline=None)
    @given(inst=instances, start=st.integers(0, 100))
    def test_telescopes(self, inst, start):
        net, params = inst
        policy, _ = solve(net, params)
        route = policy_route(net, params, policy, start % net.n)
        s = route.survival
        assert s[0] == 1.0
        assert all(b <= a for a, b in zip(s, s[1:]))
        total = math.fsum(net.edges[k].params.pickup_rate * net.edges[k].params.travel_time for k in route.edges)
        assert s[-1] == pytest.approx(math.exp(-total), rel=1e-12)


class TestBaseline:
    def test_best_stay_node_breaks_ties_low(self):
        net = build_network([node(0, 2.0), node(1, 2.0)], [RoadEdge(0, 1, road(0.1, 1.0, 1.0))])
        assert best_stay_node(net, WAGE) == 0

    def test_start_at_target(self):
        plan = shortest_route_baseline(fig2_diamond(), WAGE, 3)
        assert plan.nodes == (3,) and plan.expected_profit == 9.0

    def test_two_node_matches_optimal(self):
        plan = shortest_route_baseline(two_node(), WAGE, 0)
        assert plan.nodes == (0, 1)
        assert plan.expected_profit == pytest.approx(TWO_NODE_A, rel=1e-14)
        rows, summary = compare_with_baseline(two_node(), WAGE, solve(two_node(), WAGE)[0])
        assert summary["mean_improvement"] == pytest.approx(0.0, abs=1e-15)

    def test_three_line_strictly_better(self):
        net = three_line()
        policy, _ = solve(net, WAGE)
        plan = shortest_route_baseline(net, WAGE, 0)
        assert plan.nodes == (0, 1, 2)
        assert policy.actions[1] == STAY
        assert policy.values[0] > plan.expected_profit
        rows, summary = compare_with_baseline(net, WAGE, policy)
        assert rows[0]["improvement"] > 0
        assert summary["target_node"] == 2

    def test_fastest_path_prefers_quick_roads(self):
        nodes, edges = fastest_path(fig2_diamond(), 0, 2)
        assert nodes == [0, 3, 2] or nodes == [0, 1, 2]
        assert len(edges) == 2

    def test_unreachable(self):
        net = two_node()
        with pytest.raises(Unreachable):
            shortest_route_baseline(net, WAGE, 1, target=0)
        base, z = baseline_values(net, WAGE, target=0)
        assert base == [1.0, None]
        rows, _ = compare_with_baseline(net, WAGE, solve(net, WAGE)[0], nodes=[0])
        assert rows[0]["unreachable"] is False

    @settings(max_examples=60, deadline=None)
    @given(inst=instances)
    def test_dominance(self, inst):
        net, params = inst
        if max(stay_value(nd, params) for nd in net.nodes) < 0:
            return
        policy, _ = solve(net, params)
        base, _ = baseline_values(net, params)
        for x, b in enumerate(base):
            if b is not None:
                assert policy.values[x] >= b - 1e-9 * max(1.0, abs(b))


def test_relative_improvement():
    assert relative_improvement(11.0, 10.0) == pytest.approx(0.1)
    assert relative_improvement(1.0, -2.0) == pytest.approx(1.5)
    assert relative_improvement(0.0, 0.0) == 0.0
    assert relative_improvement(1.0, 0.0) == math.inf


@settings(max_examples=40, deadline=None)
@given(inst=instances)
def test_oracle_stages_are_monotone(inst):
    net, params = inst
    prev = brute_force_values(net, params, 0)
    for h in range(1, net.n + 1):
        cur = brute_force_values(net, params, h)
        assert all(b >= a - 1e-12 * max(1.0, abs(a)) for a, b in zip(prev, cur))
        prev = cur
    assert all(rel_close(a, b) for a, b in zip(prev, brute_force_values(net, params, net.n + 3)))
