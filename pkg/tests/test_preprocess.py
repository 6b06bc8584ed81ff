import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betweenride.errors import UnknownEdge
from betweenride.evaluation import brute_force_values
from betweenride.network import EdgeParams, RoadEdge, build_network
from betweenride.preprocess import (
    enforce_local_maxima,
    insert_waiting_nodes,
    local_maxima_violations,
    validate,
)
from betweenride.solver import solve
from betweenride.synthetic import random_driver, random_network

from instances import WAGE, fig2_diamond, node, road, two_node


def lucrative_edge():
    # R - w/Q = 18 - 0.6/0.1 = 12, endpoints stay at 1.0 and 9.0
    return build_network([node(0, 1.6), node(1, 9.6)], [RoadEdge(0, 1, road(0.1, 18.0, 2.0))])


def test_non_violating_edge_untouched():
    net = two_node()
    out, report = enforce_local_maxima(net, WAGE)
    assert out is net
    assert report.split_edges == 0 and report.violations_before == 0


def test_violating_edge_is_split():
    net = lucrative_edge()
    out, report = enforce_local_maxima(net, WAGE)
    assert report.split_edges == report.violations_before == 1
    assert report.inserted_nodes == [(2, 0)]
    assert out.n == 3
    assert out.stay_value(2, WAGE) == pytest.approx(12.0)
    assert local_maxima_violations(out, WAGE) == []
    mid = out.nodes[2]
    assert mid.lat == pytest.approx((net.nodes[0].lat + net.nodes[1].lat) / 2)
    assert mid.lon == pytest.approx((net.nodes[0].lon + net.nodes[1].lon) / 2)
    halves = [e for e in out.edges]
    assert [(e.source, e.target) for e in halves] == [(0, 2), (2, 1)]
    assert sum(e.params.travel_time for e in halves) == net.edges[0].params.travel_time
    assert sum(e.params.length for e in halves) == net.edges[0].params.length


def test_clean_network_is_identity():
    net = fig2_diamond()
    out, report = enforce_local_maxima(net, WAGE)
    assert out is net and report.split_edges == 0


def test_dead_edges_exempt():
    nodes = [node(0, 2.0, stay_q=0.0), node(1, 2.0, stay_q=0.0)]
    net = build_network(nodes, [RoadEdge(0, 1, EdgeParams(0.0, 50.0, 1.0, 100.0, 100.0))])
    assert local_maxima_violations(net, WAGE) == []


def test_report_serializes():
    _, report = enforce_local_maxima(lucrative_edge(), WAGE)
    d = report.to_dict()
    assert d["split_edges"] == 1
    assert d["inserted_nodes"] == [{"node": 2, "original_edge": 0}]
    assert d["assumptions"]


class TestWaitingNodes:
    def test_empty_is_identity(self):
        net = two_node()
        assert insert_waiting_nodes(net, []) is net

    def test_one_zone(self):
        net = two_node()
        out = insert_waiting_nodes(net, [0])
        assert out.n == net.n + 1
        assert len(out.edges) == len(net.edges) + 1
        assert out.nodes[2].stay.pickup_rate == net.edges[0].params.pickup_rate
        assert out.nodes[2].stay.ride_profit == net.edges[0].params.ride_profit

    def test_zone_by_pair(self):
        assert insert_waiting_nodes(two_node(), [(0, 1)]).n == 3

    @pytest.mark.parametrize("ref", [1, -1, (0, 0), (1, 0), "0"])
    def test_unknown(self, ref):
        with pytest.raises(UnknownEdge):
            insert_waiting_nodes(two_node(), [ref])


class TestValidate:
    def test_clean(self):
        assert validate(fig2_diamond(), WAGE).is_clean

    def test_reports_violation(self):
        report = validate(lucrative_edge(), WAGE)
        assert report.local_maxima_violations == [0]

    def test_unit_anomaly(self):
        bad = EdgeParams(0.1, 10.0, 2.0, 300.0, 600.0 * 1.1)
        net = build_network([node(0, 1.6), node(1, 9.6)], [RoadEdge(0, 1, bad)])
        assert validate(net, WAGE).unit_anomalies == [0]

    def test_dead_zone_and_reachability(self):
        nodes = [node(0, 2.0, stay_q=0.0), node(1, 9.6)]
        net = build_network(nodes, [RoadEdge(0, 1, road(0.1, 10.0, 2.0))])
        report = validate(net, WAGE)
        assert report.dead_nodes == [0]
        assert len(report.not_strongly_connected) == 1
        assert not report.is_clean

    def test_does_not_mutate(self):
        net = lucrative_edge()
        before = net.edges
        validate(net, WAGE)
        assert net.edges is before


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 9))
def test_preprocessing_properties(seed, n):
    rng = np.random.default_rng(seed)
    params = random_driver(rng)
    net = random_network(rng, n)
    out, report = enforce_local_maxima(net, params)

    assert local_maxima_violations(out, params) == []
    assert out.n == net.n + report.split_edges
    assert len(out.edges) == len(net.edges) + report.split_edges
    assert out.nodes[: net.n] == net.nodes
    again, second = enforce_local_maxima(out, params)
    assert again is out and second.split_edges == 0

    for new, k in report.inserted_nodes:
        e = net.edges[k]
        halves = [x for x in out.edges if new in (x.source, x.target)]
        assert {(h.source, h.target) for h in halves} == {(e.source, new), (new, e.target)}
        assert math.isclose(sum(h.params.travel_time for h in halves), e.params.travel_time, rel_tol=1e-15)
        assert math.isclose(sum(h.params.length for h in halves), e.params.length, rel_tol=1e-15)

    # every plan on the raw graph is still available after splitting
    raw = brute_force_values(net, params, net.n + 2)
    pre, _ = solve(out, params)
    for x in range(net.n):
        assert pre.values[x] >= raw[x] - 1e-9 * max(1.0, abs(raw[x]))
