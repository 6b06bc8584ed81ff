"""Bring a network into the form the solver requires.

The solver's acyclicity guarantee needs every road's ``R - w/Q`` to be no
larger than the better of its two endpoint stay values. Edges that break this
are split at their midpoint so that the local maximum becomes a node where a
driver can wait.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import UnknownEdge
from .network import EdgeParams, RoadEdge, RoadNetwork, RoadNode, build_network, stay_value, wait_gain

UNIT_TOLERANCE = 1e-6

INHERITED_STAY_NOTE = "split nodes inherit the edge's (Q, R) verbatim as their waiting parameters"


@dataclass
class PreprocessReport:
    split_edges: int = 0
    inserted_nodes: list[tuple[int, int]] = field(default_factory=list)
    wait_zone_nodes: int = 0
    violations_before: int = 0
    assumptions: list[str] = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["inserted_nodes"] = [{"node": k, "original_edge": e} for k, e in self.inserted_nodes]
        return {"format": "betweenride-preprocess-report", "version": 1, **d}


@dataclass
class ValidationReport:
    local_maxima_violations: list[int] = field(default_factory=list)
    dead_nodes: list[int] = field(default_factory=list)
    dead_edges: list[int] = field(default_factory=list)
    not_strongly_connected: list[int] = field(default_factory=list)
    unit_anomalies: list[int] = field(default_factory=list)

    @property
    def is_clean(self):
        return not any(asdict(self).values())

    def to_dict(self):
        return {"format": "betweenride-validation-report", "version": 1, **asdict(self)}


def violates_local_maxima(network, k, params):
    e = network.edges[k]
    bound = max(stay_value(network.nodes[e.source], params), stay_value(network.nodes[e.target], params))
    return wait_gain(e.params, params) > bound


def local_maxima_violations(network, params):
    return [k for k in range(len(network.edges)) if violates_local_maxima(network, k, params)]


def _split(network, to_split):
    """Replace each edge index in ``to_split`` by two halves through a new midpoint node."""
    nodes = list(network.nodes)
    edges = []
    inserted = []
    for k, e in enumerate(network.edges):
        if k not in to_split:
            edges.append(e)
            continue
        a, b = network.nodes[e.source], network.nodes[e.target]
        mid = len(nodes)
        p = e.params
        nodes.append(
            RoadNode(mid, (a.lat + b.lat) / 2, (a.lon + b.lon) / 2, EdgeParams.wait(p.pickup_rate, p.ride_profit))
        )
        half = EdgeParams(p.pickup_rate, p.ride_profit, p.travel_time / 2, p.speed, p.length / 2)
        edges.append(RoadEdge(e.source, mid, half))
        edges.append(RoadEdge(mid, e.target, half))
        inserted.append((mid, k))
    return build_network(nodes, edges, allow_parallel=True), inserted


def enforce_local_maxima(network: RoadNetwork, params) -> tuple[RoadNetwork, PreprocessReport]:
    """Split every edge whose wait gain exceeds both endpoint stay values.

    Depends on the wage, so it runs per driver at solve time. Returns the input
    object unchanged when nothing violates.
    """
    bad = set(local_maxima_violations(network, params))
    report = PreprocessReport(violations_before=len(bad))
    if not bad:
        return network, report
    out, inserted = _split(network, bad)
    report.split_edges = len(inserted)
    report.inserted_nodes = inserted
    report.assumptions.append(INHERITED_STAY_NOTE)
    return out, report


def _resolve_edge(network, ref):
    if isinstance(ref, tuple):
        source, target = ref
        if source == target:
            raise UnknownEdge(f"({source}, {target}) is a waiting loop, not a road edge")
        ks = network.edges_between(source, target) if 0 <= source < network.n else []
        if not ks:
            raise UnknownEdge(f"no edge {source}->{target}")
        return min(ks)
    if not isinstance(ref, (int, np.integer)) or not 0 <= ref < len(network.edges):
        raise UnknownEdge(f"edge index {ref!r} out of range (network has {len(network.edges)} road edges)")
    return int(ref)


def insert_waiting_nodes(network, wait_zones):
    """Add a midpoint waiting node on each listed edge (an index or a ``(from, to)`` pair)."""
    ks = {_resolve_edge(network, ref) for ref in wait_zones}
    if not ks:
        return network
    out, _ = _split(network, ks)
    return out


def validate(network, params) -> ValidationReport:
    """Scan for assumption violations and data problems without changing anything."""
    report = ValidationReport()
    report.local_maxima_violations = local_maxima_violations(network, params)
    report.dead_nodes = [nd.id for nd in network.nodes if nd.stay.pickup_rate == 0]
    report.dead_edges = [k for k, e in enumerate(network.edges) if e.params.pickup_rate == 0]
    for k, e in enumerate(network.edges):
        p = e.params
        expected = p.speed * p.travel_time
        if not math.isclose(expected, p.length, rel_tol=UNIT_TOLERANCE, abs_tol=1e-9):
            report.unit_anomalies.append(k)
    if not network.strongly_connected:
        n = network.n
        src = [e.source for e in network.edges]
        dst = [e.target for e in network.edges]
        graph = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
        _, labels = connected_components(graph, directed=True, connection="strong")
        sizes = np.bincount(labels)
        main = int(np.argmax(sizes))
        report.not_strongly_connected = [int(i) for i in np.flatnonzero(labels != main)]
    return report
