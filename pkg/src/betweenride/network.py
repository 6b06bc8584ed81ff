"""Road graph data model and the elementary match/value formulas.

Units throughout: minutes, meters, abstract currency. Rates are requests per
minute, speeds meters per minute, fuel cost currency per meter.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DisconnectedGraph, FormatError, InvalidEdge, InvalidParams, NonFiniteParams

NETWORK_FORMAT = "betweenride-network"
NETWORK_VERSION = 1

NEG_INF = -math.inf

# below this Q*t the closed form of the conditional match time loses digits
_SERIES_CUTOFF = 1e-4


def _check_finite(name, value):
    if not math.isfinite(value):
        raise NonFiniteParams(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class EdgeParams:
    """Economic and physical parameters of one edge (or a node's wait loop)."""

    pickup_rate: float
    ride_profit: float
    travel_time: float = 0.0
    speed: float = 0.0
    length: float = 0.0

    def __post_init__(self):
        for name in ("pickup_rate", "ride_profit", "travel_time", "speed", "length"):
            _check_finite(name, getattr(self, name))
        if self.pickup_rate < 0:
            raise InvalidParams(f"pickup_rate must be >= 0, got {self.pickup_rate}")
        if self.ride_profit <= 0:
            raise InvalidParams(f"ride_profit must be > 0, got {self.ride_profit}")
        if self.travel_time < 0 or self.speed < 0 or self.length < 0:
            raise InvalidParams("travel_time, speed and length must be >= 0")

    @classmethod
    def road(cls, pickup_rate, ride_profit, length, speed):
        """Edge params for a road segment, deriving travel time from length/speed."""
        if speed <= 0:
            raise InvalidParams(f"road speed must be > 0, got {speed}")
        return cls(pickup_rate, ride_profit, length / speed, speed, length)

    @classmethod
    def wait(cls, pickup_rate, ride_profit):
        """Params for a waiting loop: no motion, so speed is zero."""
        return cls(pickup_rate, ride_profit)


@dataclass(frozen=True)
class RoadNode:
    id: int
    lat: float
    lon: float
    stay: EdgeParams

    def __post_init__(self):
        if self.stay.speed != 0:
            raise InvalidParams(f"node {self.id}: waiting loop must have speed 0")


@dataclass(frozen=True)
class RoadEdge:
    source: int
    target: int
    params: EdgeParams


@dataclass(frozen=True)
class DriverParams:
    """Driver economics: ``wage`` per minute and ``fuel_cost`` per meter."""

    wage: float = 0.0
    fuel_cost: float = 0.0

    def __post_init__(self):
        _check_finite("wage", self.wage)
        _check_finite("fuel_cost", self.fuel_cost)
        if self.wage < 0 or self.fuel_cost < 0:
            raise InvalidParams("wage and fuel_cost must be >= 0")

    def scaled(self, factor):
        return DriverParams(self.wage * factor, self.fuel_cost * factor)

    def running_cost(self, speed):
        """Cost per minute of driving at ``speed``: time plus fuel."""
        return self.wage + self.fuel_cost * speed


@dataclass(frozen=True)
class RoadNetwork:
    """Validated, immutable road graph. Build it with :func:`build_network`."""

    nodes: tuple[RoadNode, ...]
    edges: tuple[RoadEdge, ...]
    outgoing: tuple[tuple[int, ...], ...] = field(repr=False)
    strongly_connected: bool = True

    @property
    def n(self):
        return len(self.nodes)

    def stay_value(self, node_id, params):
        return stay_value(self.nodes[node_id], params)

    def edges_between(self, source, target):
        return [k for k in self.outgoing[source] if self.edges[k].target == target]

    def with_speed_scale(self, scale):
        """Congestion scenario: divide travel times by ``scale``, multiply speeds by it."""
        if not (scale > 0 and math.isfinite(scale)):
            raise InvalidParams(f"speed scale must be a positive finite number, got {scale}")
        if scale == 1.0:
            return self
        edges = [
            RoadEdge(
                e.source,
                e.target,
                replace(e.params, travel_time=e.params.travel_time / scale, speed=e.params.speed * scale),
            )
            for e in self.edges
        ]
        return build_network(self.nodes, edges, allow_parallel=True)

    def content_hash(self):
        return hashlib.sha256(dumps_network(self).encode()).hexdigest()


# --- formulas ---------------------------------------------------------------


def match_probability(rate, t):
    """Probability of at least one request within ``t`` minutes at ``rate`` per minute."""
    if rate == 0:
        return 0.0
    if math.isinf(t):
        return 1.0
    return -math.expm1(-rate * t)


def expected_match_time(rate, t):
    """Mean time to the first request given that one arrives within ``t``.

    ``t`` may be ``math.inf``, in which case this is the unconditional mean 1/rate.
    """
    if math.isinf(t):
        return 1.0 / rate
    x = rate * t
    if x < _SERIES_CUTOFF:
        # t * (1/x - 1/expm1(x)) expanded for small x
        return t * (0.5 - x / 12.0 + x**3 / 720.0)
    if x > 700.0:
        return 1.0 / rate - t * math.exp(-x)
    return 1.0 / rate - t / math.expm1(x)


def stay_value(node, params):
    """Expected profit of waiting at ``node`` until matched; -inf where no request can arrive."""
    q = node.stay.pickup_rate
    if q == 0:
        return NEG_INF
    return node.stay.ride_profit - params.wage / q


def wait_gain(edge_params, params):
    """``R - w/Q`` for an edge: the quantity the local-maxima condition compares."""
    if edge_params.pickup_rate == 0:
        return NEG_INF
    return edge_params.ride_profit - params.wage / edge_params.pickup_rate


# --- construction -----------------------------------------------------------


def _weak_components(n, edges):
    adj = [[] for _ in range(n)]
    for e in edges:
        adj[e.source].append(e.target)
        adj[e.target].append(e.source)
    label = [-1] * n
    comps = []
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = len(comps)
        comp = [s]
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if label[v] < 0:
                    label[v] = label[s]
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def weak_components(network_or_n, edges=None):
    """Weakly connected components, each a sorted list of node ids."""
    if edges is None:
        return _weak_components(network_or_n.n, network_or_n.edges)
    return _weak_components(network_or_n, edges)


def _is_strongly_connected(n, edges):
    if n <= 1:
        return True
    fwd = [[] for _ in range(n)]
    bwd = [[] for _ in range(n)]
    for e in edges:
        fwd[e.source].append(e.target)
        bwd[e.target].append(e.source)
    for adj in (fwd, bwd):
        seen = [False] * n
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        if not all(seen):
            return False
    return True


def build_network(nodes: Sequence[RoadNode], edges: Iterable[RoadEdge], allow_parallel=False) -> RoadNetwork:
    """Validate nodes and edges and build the adjacency.

    Raises InvalidEdge, InvalidParams or DisconnectedGraph. Weak connectivity is
    required; failure of strong connectivity is only recorded on the result.
    """
    nodes = tuple(nodes)
    edges = tuple(edges)
    n = len(nodes)
    if n == 0:
        raise InvalidParams("network has no nodes")
    for i, node in enumerate(nodes):
        if node.id != i:
            raise InvalidParams(f"node ids must be contiguous 0..n-1; position {i} has id {node.id}")
    seen_pairs = set()
    for k, e in enumerate(edges):
        if not (0 <= e.source < n and 0 <= e.target < n):
            raise InvalidEdge(f"edge {k}: endpoint out of range ({e.source}->{e.target}, n={n})")
        if e.source == e.target:
            raise InvalidEdge(f"edge {k}: self-loop {e.source}->{e.target}; waiting lives on the node")
        if e.params.travel_time <= 0:
            raise InvalidEdge(f"edge {k}: travel time must be > 0, got {e.params.travel_time}")
        pair = (e.source, e.target)
        if pair in seen_pairs and not allow_parallel:
            raise InvalidEdge(f"edge {k}: duplicate edge {pair}; pass allow_parallel=True for parallel roads")
        seen_pairs.add(pair)

    comps = _weak_components(n, edges)
    if len(comps) > 1:
        comps.sort(key=lambda c: (-len(c), c[0]))
        stray = comps[1]
        raise DisconnectedGraph(
            f"network has {len(comps)} weakly connected components; nodes {stray[:10]} "
            f"are unreachable from node {comps[0][0]}",
            component=stray,
        )

    out = [[] for _ in range(n)]
    for k, e in enumerate(edges):
        out[e.source].append(k)
    outgoing = tuple(tuple(sorted(ks, key=lambda k: (edges[k].target, k))) for ks in out)
    return RoadNetwork(nodes, edges, outgoing, _is_strongly_connected(n, edges))


# --- serialization ----------------------------------------------------------


def _params_to_dict(p):
    return {
        "Q": p.pickup_rate,
        "R": p.ride_profit,
        "T": p.travel_time,
        "S": p.speed,
        "length": p.length,
    }


def _params_from_dict(d):
    return EdgeParams(
        float(d["Q"]), float(d["R"]), float(d.get("T", 0.0)), float(d.get("S", 0.0)), float(d.get("length", 0.0))
    )


def network_to_dict(network):
    return {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "units": {"time": "minute", "distance": "meter", "rate": "per_minute"},
        "nodes": [
            {"id": nd.id, "lat": nd.lat, "lon": nd.lon, "stay": {"Q": nd.stay.pickup_rate, "R": nd.stay.ride_profit}}
            for nd in network.nodes
        ],
        "edges": [{"from": e.source, "to": e.target, **_params_to_dict(e.params)} for e in network.edges],
    }


def network_from_dict(d):
    if d.get("format") != NETWORK_FORMAT:
        raise FormatError(f"not a network file (format={d.get('format')!r})")
    if d.get("version") != NETWORK_VERSION:
        raise FormatError(f"unsupported network version {d.get('version')!r}")
    try:
        nodes = [
            RoadNode(int(r["id"]), float(r["lat"]), float(r["lon"]), EdgeParams.wait(float(r["stay"]["Q"]), float(r["stay"]["R"])))
            for r in d["nodes"]
        ]
        edges = [RoadEdge(int(r["from"]), int(r["to"]), _params_from_dict(r)) for r in d["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed network record: {exc}") from exc
    return build_network(nodes, edges, allow_parallel=True)


def dumps_network(network):
    return json.dumps(network_to_dict(network), indent=1, sort_keys=True) + "\n"


def save_network(network, path):
    Path(path).write_text(dumps_network(network), encoding="utf-8")


def load_network(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    return network_from_dict(data)
