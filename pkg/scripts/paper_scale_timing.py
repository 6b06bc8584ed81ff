"""Solve a ~9k-node synthetic street grid, time it, and compare with the shortest-route heuristic.

Runs the comparison at free-flow speed and again under congestion (speeds
scaled down), printing one summary line per setting.

    python3 scripts/paper_scale_timing.py --rows 95 --cols 95 --congestion 0.5
"""

import argparse
import time

from betweenride.cli import fmt
from betweenride.evaluation import compare_with_baseline
from betweenride.network import DriverParams
from betweenride.preprocess import enforce_local_maxima
from betweenride.solver import solve
from betweenride.synthetic import grid_network


def run(base, params, scale, mode, workers):
    started = time.perf_counter()
    net, prep = enforce_local_maxima(base.with_speed_scale(scale), params)
    prep_s = time.perf_counter() - started
    policy, report = solve(net, params, mode=mode, workers=workers)
    _, summary = compare_with_baseline(net, params, policy, nodes=range(base.n))
    print(
        f"speed x{scale:g}: {net.n} nodes ({prep.split_edges} splits), {len(net.edges)} edges | "
        f"preprocess {prep_s:.2f}s, solve {report.wall_time:.2f}s in {report.passes} passes ({report.mode}) | "
        f"mean optimal {fmt(summary['mean_optimal'])} vs baseline {fmt(summary['mean_baseline'])}, "
        f"mean improvement {summary['mean_improvement']:.2%}, {summary['unreachable']} unreachable"
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=95)
    ap.add_argument("--cols", type=int, default=95)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--wage", type=float, default=0.3, help="currency per minute")
    ap.add_argument("--fuel", type=float, default=0.0005, help="currency per meter")
    ap.add_argument("--congestion", type=float, default=0.5, help="speed multiplier for the congested run")
    ap.add_argument("--mode", choices=["sequential", "synchronous"], default="sequential")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    started = time.perf_counter()
    base = grid_network(args.rows, args.cols, seed=args.seed)
    print(f"built grid: {base.n} vertices, {len(base.edges)} edges in {time.perf_counter() - started:.2f}s")
    params = DriverParams(args.wage, args.fuel)
    for scale in (1.0, args.congestion):
        run(base, params, scale, args.mode, args.workers)


if __name__ == "__main__":
    main()
