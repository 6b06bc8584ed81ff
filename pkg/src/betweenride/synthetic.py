"""Random and grid-shaped test networks."""

from __future__ import annotations

import math

import numpy as np

from .network import DriverParams, EdgeParams, RoadEdge, RoadNode, build_network

METERS_PER_DEG_LAT = 111_320.0


def _road(rng, q_range, t_range, r_range, speed_range):
    speed = rng.uniform(*speed_range)
    t = rng.uniform(*t_range)
    return EdgeParams(rng.uniform(*q_range), rng.uniform(*r_range), t, speed, speed * t)


def random_network(
    rng,
    n,
    extra_edges=None,
    q_range=(0.01, 2.0),
    t_range=(0.5, 10.0),
    r_range=(1.0, 20.0),
    speed_range=(200.0, 900.0),
):
    """Weakly connected random network on ``n`` nodes.

    A random spanning tree (random orientation, sometimes both directions) is
    topped up with ``extra_edges`` random extra directed edges.
    """
    nodes = [
        RoadNode(
            i,
            42.35 + 0.01 * rng.random(),
            -71.06 + 0.01 * rng.random(),
            EdgeParams.wait(rng.uniform(*q_range), rng.uniform(*r_range)),
        )
        for i in range(n)
    ]
    pairs = set()
    perm = rng.permutation(n)
    for idx in range(1, n):
        a = int(perm[idx])
        b = int(perm[rng.integers(0, idx)])
        roll = rng.random()
        if roll < 0.4:
            pairs.add((a, b))
        elif roll < 0.8:
            pairs.add((b, a))
        else:
            pairs.update([(a, b), (b, a)])
    if extra_edges is None:
        extra_edges = int(rng.integers(0, 2 * n + 1))
    for _ in range(extra_edges):
        a, b = (int(v) for v in rng.integers(0, n, 2))
        if a != b:
            pairs.add((a, b))
    edges = [RoadEdge(a, b, _road(rng, q_range, t_range, r_range, speed_range)) for a, b in sorted(pairs)]
    return build_network(nodes, edges)


def random_driver(rng):
    return DriverParams(wage=rng.uniform(0.0, 1.0), fuel_cost=rng.uniform(0.0, 0.002))


def grid_network(rows, cols, seed=0, two_way_fraction=0.4, block_m=120.0, origin=(42.33, -71.12)):
    """Manhattan-style street grid with smoothly varying demand and surge fields.

    Each block is a one-way street unless it draws two-way with probability
    ``two_way_fraction``. Speeds are drawn from a small set of posted limits.
    """
    rng = np.random.default_rng(seed)
    lat0, lon0 = origin
    dlat = block_m / METERS_PER_DEG_LAT
    dlon = block_m / (METERS_PER_DEG_LAT * math.cos(math.radians(lat0)))
    hot = rng.uniform(0, 1, (4, 2)) * (rows, cols)

    def fields(r, c):
        d2 = ((hot[:, 0] - r) ** 2 + (hot[:, 1] - c) ** 2) / (0.15 * (rows + cols)) ** 2
        bump = float(np.exp(-d2).sum())
        q = 0.02 + 0.3 * bump
        return q, 6.0 + 6.0 * bump

    nodes = []
    for r in range(rows):
        for c in range(cols):
            q, rv = fields(r, c)
            nodes.append(RoadNode(r * cols + c, lat0 + r * dlat, lon0 + c * dlon, EdgeParams.wait(q, rv)))
    speeds = np.array([25.0, 30.0, 35.0]) * 1609.344 / 60.0
    edges = []
    for r in range(rows):
        for c in range(cols):
            here = r * cols + c
            for nr, nc in ((r, c + 1), (r + 1, c)):
                if nr >= rows or nc >= cols:
                    continue
                there = nr * cols + nc
                q, rv = fields((r + nr) / 2, (c + nc) / 2)
                s = float(rng.choice(speeds))
                p = EdgeParams(q, rv, block_m / s, s, block_m)
                if rng.random() < two_way_fraction:
                    edges += [RoadEdge(here, there, p), RoadEdge(there, here, p)]
                elif rng.random() < 0.5:
                    edges.append(RoadEdge(here, there, p))
                else:
                    edges.append(RoadEdge(there, here, p))
    return build_network(nodes, edges)
