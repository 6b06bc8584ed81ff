"""Edge-relaxation value iteration for the between-ride routing problem.

Every node starts with the better of waiting forever and stopping. Each pass
relaxes every road edge, replacing a node's plan when driving the edge and then
following the head node's plan pays strictly more. Because an optimal policy
visits each node at most once, at most ``n`` passes are needed.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import AssumptionViolated, CycleDetected, FormatError, NonFiniteParams
from .network import DriverParams, EdgeParams, RoadNetwork, stay_value
from .preprocess import local_maxima_violations

DEFAULT_TOL = 1e-9

# Candidates must beat the incumbent by this relative margin. Rounding in the
# relaxation can otherwise manufacture "improvements" between exactly tied
# plans and close a pointer cycle.
TIE_GUARD = 1e-12

POLICY_FORMAT = "betweenride-policy"


@dataclass(frozen=True)
class Stay:
    def __str__(self):
        return "stay"


@dataclass(frozen=True)
class Stop:
    def __str__(self):
        return "stop"


@dataclass(frozen=True)
class GotoNode:
    node: int
    edge: int = -1  # index of the road edge taken; -1 when unknown (hand-built policies)

    def __str__(self):
        return f"goto {self.node}"


STAY = Stay()
STOP = Stop()
Action = Union[Stay, Stop, GotoNode]


@dataclass(frozen=True)
class Policy:
    values: tuple[float, ...]
    actions: tuple[Action, ...]
    passes_used: int = 0

    @property
    def n(self):
        return len(self.values)


@dataclass(frozen=True)
class SolveReport:
    passes: int
    relaxations_applied: int
    wall_time: float
    converged: bool
    mode: str = "sequential"


@dataclass(frozen=True)
class PolicyPath:
    nodes: tuple[int, ...]
    edges: tuple[int, ...]
    terminal: Action


def relax_value(edge_params: EdgeParams, params: DriverParams, head_value: float) -> float:
    """Value of driving the edge, then following a plan worth ``head_value`` at its head."""
    q, t = edge_params.pickup_rate, edge_params.travel_time
    cost = params.running_cost(edge_params.speed)
    if q == 0:
        return head_value - t * cost
    matched = -math.expm1(-q * t)
    return (edge_params.ride_profit - cost / q) * matched + (1.0 - matched) * head_value


def _edge_coefficients(network, params):
    """Scan order plus per-edge affine map ``head -> a + p * head``."""
    order = sorted(range(len(network.edges)), key=lambda k: (network.edges[k].source, network.edges[k].target, k))
    src, dst, a, p = [], [], [], []
    for k in order:
        e = network.edges[k]
        ep = e.params
        cost = params.running_cost(ep.speed)
        if ep.pickup_rate == 0:
            a.append(-ep.travel_time * cost)
            p.append(1.0)
        else:
            matched = -math.expm1(-ep.pickup_rate * ep.travel_time)
            a.append((ep.ride_profit - cost / ep.pickup_rate) * matched)
            p.append(1.0 - matched)
        src.append(e.source)
        dst.append(e.target)
    return order, src, dst, a, p


def _initial(network, params):
    values, nxt = [], []
    for node in network.nodes:
        s = stay_value(node, params)
        values.append(max(0.0, s))
        nxt.append(-1 if s >= 0 else -2)  # -1 stay, -2 stop, else edge index
    return values, nxt


def _check_inputs(network, params, check_assumptions):
    if not (math.isfinite(params.wage) and math.isfinite(params.fuel_cost)):
        raise NonFiniteParams("driver params must be finite")
    if check_assumptions:
        bad = local_maxima_violations(network, params)
        if bad:
            raise AssumptionViolated(
                f"{len(bad)} edge(s) violate the local-maxima condition (first: {bad[:5]}); "
                "run enforce_local_maxima before solving",
                edges=bad,
            )


def _sequential_passes(network, params, values, nxt, max_passes, tol):
    order, src, dst, a, p = _edge_coefficients(network, params)
    plan = list(zip(src, dst, a, p, order))
    passes = applied = 0
    converged = False
    while passes < max_passes:
        passes += 1
        biggest = 0.0
        for x, y, ak, pk, k in plan:
            cand = ak + pk * values[y]
            cur = values[x]
            if cand > cur + TIE_GUARD * abs(cur):
                values[x] = cand
                nxt[x] = k
                applied += 1
                if cand - cur > biggest:
                    biggest = cand - cur
        if biggest <= tol:
            converged = True
            break
    return passes, applied, converged


def _synchronous_passes(network, params, values, nxt, max_passes, tol, workers):
    order, src, dst, a, p = _edge_coefficients(network, params)
    order = np.asarray(order, dtype=np.int64)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    a = np.asarray(a)
    p = np.asarray(p)
    v = np.asarray(values, dtype=float)
    nx = np.asarray(nxt, dtype=np.int64)
    m = len(order)
    if m:
        starts = np.flatnonzero(np.r_[True, src[1:] != src[:-1]])
        group_src = src[starts]
        counts = np.diff(np.r_[starts, m])
    chunks = np.array_split(np.arange(m), max(1, workers)) if m else []
    cand = np.empty(m)

    def fill(chunk, old):
        if len(chunk):
            cand[chunk] = a[chunk] + p[chunk] * old[dst[chunk]]

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    passes = applied = 0
    converged = False
    try:
        while passes < max_passes:
            passes += 1
            old = v.copy()
            if m:
                if pool is None:
                    fill(chunks[0], old)
                else:
                    list(pool.map(lambda c: fill(c, old), chunks))
                best = np.maximum.reduceat(cand, starts)
                hits = np.flatnonzero(cand == np.repeat(best, counts))
                first = hits[np.searchsorted(hits, starts)]
                inc = old[group_src]
                improve = best > inc + TIE_GUARD * np.abs(inc)
                targets = group_src[improve]
                v[targets] = best[improve]
                nx[targets] = order[first[improve]]
                applied += int(improve.sum())
            biggest = float(np.max(v - old)) if len(v) else 0.0
            if biggest <= tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    values[:] = v.tolist()
    nxt[:] = nx.tolist()
    return passes, applied, converged


def _to_policy(network, values, nxt, passes):
    actions = []
    for k in nxt:
        if k == -1:
            actions.append(STAY)
        elif k == -2:
            actions.append(STOP)
        else:
            actions.append(GotoNode(network.edges[k].target, k))
    return Policy(tuple(values), tuple(actions), passes)


def solve(
    network: RoadNetwork,
    params: DriverParams,
    *,
    tol=DEFAULT_TOL,
    max_passes=None,
    mode="sequential",
    workers=1,
    check_assumptions=True,
) -> tuple[Policy, SolveReport]:
    """Optimal value and next action for every node.

    ``mode="sequential"`` updates values in place within a pass (in fixed
    (from, to, index) edge order). ``mode="synchronous"`` computes each pass
    from the previous pass's values, optionally spreading the edges over
    ``workers`` threads. ``max_passes`` caps the pass count below ``n``.

    Raises AssumptionViolated when the network has not been preprocessed.
    With ``check_assumptions=False`` that scan is skipped, and so is the
    acyclicity check on the result, which then carries no guarantees.
    """
    _check_inputs(network, params, check_assumptions)
    started = time.perf_counter()
    limit = network.n if max_passes is None else min(network.n, max_passes)
    values, nxt = _initial(network, params)
    if mode == "sequential":
        passes, applied, converged = _sequential_passes(network, params, values, nxt, limit, tol)
    elif mode == "synchronous":
        passes, applied, converged = _synchronous_passes(network, params, values, nxt, limit, tol, workers)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    policy = _to_policy(network, values, nxt, passes)
    if check_assumptions:
        ok, cycle = assert_acyclic(policy)
        if not ok:
            raise CycleDetected(f"solver produced a policy cycle {cycle}", cycle=cycle)
    report = SolveReport(passes, applied, time.perf_counter() - started, converged, mode)
    return policy, report


def extra_pass(network, params, policy):
    """Run one more in-place pass from ``policy``; returns (updates applied, largest change)."""
    values = list(policy.values)
    nxt = []
    for act in policy.actions:
        nxt.append(-1 if act == STAY else -2 if act == STOP else act.edge)
    before = list(values)
    _, applied, _ = _sequential_passes(network, params, values, nxt, 1, math.inf)
    return applied, max((b - a for a, b in zip(before, values)), default=0.0)


def assert_acyclic(policy: Policy):
    """Return ``(True, ())`` if every next-pointer chain terminates, else ``(False, cycle)``."""
    n = policy.n
    state = [0] * n  # 0 unvisited, 1 on current chain, 2 known to terminate
    for s in range(n):
        if state[s]:
            continue
        chain = []
        x = s
        while True:
            if not 0 <= x < n:
                raise CycleDetected(f"next pointer to unknown node {x}")
            if state[x] == 2:
                break
            if state[x] == 1:
                return False, tuple(chain[chain.index(x):])
            state[x] = 1
            chain.append(x)
            act = policy.actions[x]
            if not isinstance(act, GotoNode):
                break
            x = act.node
        for y in chain:
            state[y] = 2
    return True, ()


def extract_path(policy: Policy, start: int) -> PolicyPath:
    """Follow next pointers from ``start`` until the plan stays or stops."""
    if not 0 <= start < policy.n:
        raise IndexError(f"start node {start} out of range")
    nodes, edges = [start], []
    seen = {start}
    x = start
    while isinstance(policy.actions[x], GotoNode):
        act = policy.actions[x]
        x = act.node
        if x in seen or len(nodes) >= policy.n:
            raise CycleDetected(f"policy revisits node {x} from start {start}", cycle=nodes[nodes.index(x):] if x in seen else nodes)
        seen.add(x)
        nodes.append(x)
        edges.append(act.edge)
    return PolicyPath(tuple(nodes), tuple(edges), policy.actions[x])


# --- serialization ----------------------------------------------------------


def _action_to_dict(act):
    if isinstance(act, GotoNode):
        return {"type": "goto", "node": act.node, "edge": act.edge}
    return {"type": str(act)}


def _action_from_dict(d):
    kind = d.get("type")
    if kind == "stay":
        return STAY
    if kind == "stop":
        return STOP
    if kind == "goto":
        return GotoNode(int(d["node"]), int(d.get("edge", -1)))
    raise FormatError(f"unknown action type {kind!r}")


def policy_to_dict(policy, network, params, extra=None):
    d = {
        "format": POLICY_FORMAT,
        "version": 1,
        "driver": {"wage": params.wage, "fuel_cost": params.fuel_cost},
        "network_hash": network.content_hash(),
        "passes_used": policy.passes_used,
        "nodes": [
            {"id": i, "value": v, "action": _action_to_dict(a)}
            for i, (v, a) in enumerate(zip(policy.values, policy.actions))
        ],
    }
    if extra:
        d.update(extra)
    return d


def policy_from_dict(d):
    if d.get("format") != POLICY_FORMAT:
        raise FormatError(f"not a policy file (format={d.get('format')!r})")
    try:
        rows = sorted(d["nodes"], key=lambda r: int(r["id"]))
        values = tuple(float(r["value"]) for r in rows)
        actions = tuple(_action_from_dict(r["action"]) for r in rows)
        params = DriverParams(float(d["driver"]["wage"]), float(d["driver"]["fuel_cost"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed policy record: {exc}") from exc
    return Policy(values, actions, int(d.get("passes_used", 0))), params, d


def dumps_policy(policy, network, params, extra=None):
    return json.dumps(policy_to_dict(policy, network, params, extra), indent=1, sort_keys=True) + "\n"


def load_policy(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    return policy_from_dict(data)


def policy_hash(policy):
    blob = json.dumps([[v, _action_to_dict(a)] for v, a in zip(policy.values, policy.actions)])
    return hashlib.sha256(blob.encode()).hexdigest()
