"""Oracles and baselines for checking solver output.

``brute_force_values`` is a separate backward induction written from the
per-outcome stage profits; it shares no relaxation code with the solver.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CyclicPolicy, NotAPath, Unreachable
from .network import DriverParams, RoadNetwork, expected_match_time, match_probability, stay_value
from .solver import STAY, GotoNode, Policy, assert_acyclic, extract_path, relax_value

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"
EPISODE_CHUNK = 1 << 14


@dataclass(frozen=True)
class RoutePlan:
    nodes: tuple[int, ...]
    edges: tuple[int, ...]
    terminal: object
    survival: tuple[float, ...]
    expected_profit: float

    def to_dict(self):
        return {
            "format": "betweenride-route",
            "version": 1,
            "nodes": list(self.nodes),
            "edges": list(self.edges),
            "terminal": str(self.terminal),
            "survival": list(self.survival),
            "expected_profit": self.expected_profit,
        }


@dataclass(frozen=True)
class SimulationStats:
    episodes: int
    mean_profit: float
    std_error: float
    match_rate: float
    mean_time_to_match: float
    seed: int
    rng: str = RNG_ALGORITHM

    def to_dict(self):
        return {"format": "betweenride-simulation", "version": 1, **asdict(self)}


def _stage_profit(ep, params):
    """Expected one-stage profit from the two outcomes (matched en route / reach the head)."""
    cost = params.wage + params.fuel_cost * ep.speed
    t = ep.travel_time
    p_match = match_probability(ep.pickup_rate, t)
    on_arrival = -t * cost
    if p_match == 0:
        return on_arrival, 1.0
    on_match = ep.ride_profit - expected_match_time(ep.pickup_rate, t) * cost
    return p_match * on_match + (1 - p_match) * on_arrival, 1 - p_match


def brute_force_values(network: RoadNetwork, params: DriverParams, horizon: int) -> list[float]:
    """Optimal value with at most ``horizon`` moves followed by waiting forever or stopping."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    terminal = [max(0.0, stay_value(nd, params)) for nd in network.nodes]
    moves = [[] for _ in range(network.n)]
    for e in network.edges:
        gain, p_cont = _stage_profit(e.params, params)
        moves[e.source].append((gain, p_cont, e.target))
    v = list(terminal)
    for _ in range(horizon):
        v = [
            max([terminal[x]] + [gain + p_cont * v[y] for gain, p_cont, y in moves[x]])
            for x in range(network.n)
        ]
    return v


def _edge_for(network, x, act):
    if act.edge >= 0:
        e = network.edges[act.edge]
        if e.source != x or e.target != act.node:
            raise NotAPath(f"action at {x} names edge {act.edge} which does not run {x}->{act.node}")
        return e
    ks = network.edges_between(x, act.node)
    if not ks:
        raise NotAPath(f"no edge {x}->{act.node}")
    return network.edges[min(ks)]


def fixed_policy_value(network: RoadNetwork, params: DriverParams, policy: Policy) -> list[float]:
    """Expected profit of following an acyclic ``policy`` from every node."""
    ok, cycle = assert_acyclic(policy)
    if not ok:
        raise CyclicPolicy(f"policy contains the cycle {list(cycle)}", cycle=cycle)
    values = [None] * network.n
    for s in range(network.n):
        chain = []
        x = s
        while values[x] is None and isinstance(policy.actions[x], GotoNode):
            chain.append(x)
            x = policy.actions[x].node
        if values[x] is None:
            act = policy.actions[x]
            values[x] = stay_value(network.nodes[x], params) if act == STAY else 0.0
        for y in reversed(chain):
            act = policy.actions[y]
            values[y] = relax_value(_edge_for(network, y, act).params, params, values[act.node])
    return values


def _walk(network, policy, start):
    ok, cycle = assert_acyclic(policy)
    if not ok:
        raise CyclicPolicy(f"policy contains the cycle {list(cycle)}", cycle=cycle)
    edges = []
    x = start
    while isinstance(policy.actions[x], GotoNode):
        act = policy.actions[x]
        edges.append(_edge_for(network, x, act))
        x = act.node
    return edges, x, policy.actions[x]


def _simulate_chunk(edges, final, terminal, params, size, seed_seq):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    profit = np.zeros(size)
    clock = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    match_time = np.full(size, np.nan)
    for e in edges:
        ep = e.params
        cost = params.wage + params.fuel_cost * ep.speed
        if ep.pickup_rate > 0:
            m = rng.exponential(1.0 / ep.pickup_rate, size)
        else:
            m = np.full(size, np.inf)
        hit = alive & (m < ep.travel_time)
        miss = alive & ~hit
        profit[hit] += ep.ride_profit - m[hit] * cost
        match_time[hit] = clock[hit] + m[hit]
        profit[miss] -= ep.travel_time * cost
        clock[miss] += ep.travel_time
        alive = miss
    if terminal == STAY:
        q = final.stay.pickup_rate
        m = rng.exponential(1.0 / q, size)
        profit[alive] += final.stay.ride_profit - m[alive] * params.wage
        match_time[alive] = clock[alive] + m[alive]
    return profit, match_time


def simulate_policy(network, params, policy, start, episodes, seed, workers=1) -> SimulationStats:
    """Monte Carlo estimate of the policy's expected profit from ``start``.

    Episodes are split into fixed-size chunks, each with its own child seed, so
    results do not depend on ``workers``.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    edges, last, terminal = _walk(network, policy, start)
    final = network.nodes[last]
    if terminal == STAY and final.stay.pickup_rate == 0:
        raise ValueError(f"policy waits forever at node {last} where no request can arrive")
    sizes = [EPISODE_CHUNK] * (episodes // EPISODE_CHUNK)
    if episodes % EPISODE_CHUNK:
        sizes.append(episodes % EPISODE_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i):
        return _simulate_chunk(edges, final, terminal, params, sizes[i], seeds[i])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    profit = np.concatenate([p for p, _ in parts])
    times = np.concatenate([t for _, t in parts])
    mean = math.fsum(profit) / episodes
    std = float(np.std(profit, ddof=1)) if episodes > 1 else 0.0
    matched = ~np.isnan(times)
    return SimulationStats(
        episodes=episodes,
        mean_profit=mean,
        std_error=std / math.sqrt(episodes),
        match_rate=float(matched.mean()),
        mean_time_to_match=float(times[matched].mean()) if matched.any() else math.nan,
        seed=seed,
    )


def survival_along_route(network, route, edges=None) -> list[float]:
    """Probability of still having no request on reaching each node of ``route``."""
    route = list(route)
    if not route:
        raise NotAPath("empty route")
    out = [1.0]
    for i, (x, y) in enumerate(zip(route, route[1:])):
        if edges is not None:
            e = network.edges[edges[i]]
            if (e.source, e.target) != (x, y):
                raise NotAPath(f"edge {edges[i]} does not run {x}->{y}")
        else:
            ks = network.edges_between(x, y)
            if not ks:
                raise NotAPath(f"no edge {x}->{y}")
            e = network.edges[min(ks)]
        out.append(out[-1] * math.exp(-e.params.pickup_rate * e.params.travel_time))
    return out


def fastest_paths_to(network, goal, stop_at=None):
    """Label-setting search backwards from ``goal`` over travel times.

    Returns ``{node: edge index to take}`` for every settled node (the goal maps
    to None). Stops early once ``stop_at`` is settled.
    """
    incoming = [[] for _ in range(network.n)]
    for k, e in enumerate(network.edges):
        incoming[e.target].append(k)
    dist = {goal: 0.0}
    via = {goal: None}
    heap = [(0.0, goal)]
    settled = {}
    while heap:
        d, y = heapq.heappop(heap)
        if y in settled:
            continue
        settled[y] = via[y]
        if y == stop_at:
            break
        for k in incoming[y]:
            e = network.edges[k]
            nd = d + e.params.travel_time
            if nd < dist.get(e.source, math.inf):
                dist[e.source] = nd
                via[e.source] = k
                heapq.heappush(heap, (nd, e.source))
    return settled


def _follow(network, tree, start):
    nodes, edges = [start], []
    while tree[nodes[-1]] is not None:
        k = tree[nodes[-1]]
        edges.append(k)
        nodes.append(network.edges[k].target)
    return nodes, edges


def fastest_path(network, start, goal):
    """Minimum-travel-time path from ``start`` to ``goal`` as (nodes, edge indices)."""
    tree = fastest_paths_to(network, goal, stop_at=start)
    if start not in tree:
        raise Unreachable(f"node {goal} is not reachable from node {start}")
    return _follow(network, tree, start)


def best_stay_node(network, params):
    stays = [stay_value(nd, params) for nd in network.nodes]
    return max(range(network.n), key=lambda i: (stays[i], -i))


def _route_plan(network, params, nodes, edges, goal_value):
    value = goal_value
    for k in reversed(edges):
        value = relax_value(network.edges[k].params, params, value)
    return RoutePlan(tuple(nodes), tuple(edges), STAY, tuple(survival_along_route(network, nodes, edges)), value)


def _target(network, params, target):
    z = best_stay_node(network, params) if target is None else target
    zval = stay_value(network.nodes[z], params)
    if zval < 0:
        raise ValueError("no node has a nonnegative stay value")
    return z, zval


def shortest_route_baseline(network, params, start, target=None) -> RoutePlan:
    """Drive the fastest path to the best waiting node and wait there."""
    z, zval = _target(network, params, target)
    nodes, edges = fastest_path(network, start, z)
    return _route_plan(network, params, nodes, edges, zval)


def baseline_values(network, params, target=None):
    """Shortest-route expected profit for every node; None where the target is unreachable."""
    z, zval = _target(network, params, target)
    tree = fastest_paths_to(network, z)
    out = [None] * network.n
    out[z] = zval
    for s in tree:
        chain = []
        x = s
        while out[x] is None:
            chain.append(x)
            x = network.edges[tree[x]].target
        for y in reversed(chain):
            e = network.edges[tree[y]]
            out[y] = relax_value(e.params, params, out[e.target])
    return out, z


def policy_route(network, params, policy, start) -> RoutePlan:
    path = extract_path(policy, start)
    value = fixed_policy_value(network, params, policy)[start]
    survival = survival_along_route(network, path.nodes, path.edges if all(k >= 0 for k in path.edges) else None)
    return RoutePlan(path.nodes, path.edges, path.terminal, tuple(survival), value)


def relative_improvement(optimal, baseline):
    if baseline == 0:
        return 0.0 if optimal == 0 else math.inf
    return (optimal - baseline) / abs(baseline)


def compare_with_baseline(network, params, policy, nodes=None):
    """Per-node optimal vs shortest-route values plus a summary over reachable rows."""
    base, z = baseline_values(network, params)
    rows = []
    for x in range(network.n) if nodes is None else nodes:
        row = {"node": x, "optimal": policy.values[x]}
        if base[x] is None:
            row.update(baseline=None, improvement=None, unreachable=True)
        else:
            row.update(baseline=base[x], improvement=relative_improvement(policy.values[x], base[x]), unreachable=False)
        rows.append(row)
    ok = [r for r in rows if not r["unreachable"]]
    finite = [r["improvement"] for r in ok if math.isfinite(r["improvement"])]
    summary = {
        "nodes": len(rows),
        "unreachable": len(rows) - len(ok),
        "mean_optimal": math.fsum(r["optimal"] for r in ok) / len(ok) if ok else math.nan,
        "mean_baseline": math.fsum(r["baseline"] for r in ok) / len(ok) if ok else math.nan,
        "mean_improvement": math.fsum(finite) / len(finite) if finite else math.nan,
        "max_improvement": max(finite) if finite else math.nan,
        "target_node": z,
    }
    return rows, summary
