"""Command-line entry point: ``betweenride {ingest,solve,route,compare,stats,simulate}``.

Exit codes: 0 success, 1 internal invariant violation, 2 bad user input.
Each command that writes a file also writes ``<out>.manifest.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

from .errors import BetweenRideError, CycleDetected, CyclicPolicy
from .evaluation import compare_with_baseline, policy_route, simulate_policy
from .network import DriverParams, load_network, network_to_dict
from .osm import GridField, IngestConfig, apply_grid, haversine, parse_osm
from .preprocess import enforce_local_maxima
from .solver import load_policy, policy_to_dict, solve

CONFIG_ENV = "BETWEENRIDE_CONFIG"
DEFAULT_RADIUS_M = 250.0


class UsageError(Exception):
    pass


def fmt(x):
    """Fixed 7-significant-digit rendering for text output."""
    if x is None:
        return "-"
    return f"{x:.7g}"


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out):
    return Path(str(out) + ".manifest.json")


def _build_manifest(command, inputs, outputs, **fields):
    body = {
        "command": command,
        "inputs": {Path(p).name: _sha256(p) for p in inputs},
        "outputs": [Path(p).name for p in outputs],
        **fields,
    }
    body["id"] = hashlib.sha256(_dump(body).encode()).hexdigest()
    return body


def _write_manifest(manifest, out, timings):
    manifest = dict(manifest, timings=timings)
    manifest_path(out).write_text(_dump(manifest), encoding="utf-8")


def _driver(args):
    try:
        return DriverParams(args.wage, args.fuel)
    except BetweenRideError as exc:
        raise UsageError(f"invalid driver parameters: {exc}") from exc


def _prepared(network_path, params, speed_scale):
    base = load_network(network_path)
    scaled = base.with_speed_scale(speed_scale)
    network, report = enforce_local_maxima(scaled, params)
    return base, network, report


# --- commands ---------------------------------------------------------------


def cmd_ingest(args):
    config_path = args.config or os.environ.get(CONFIG_ENV)
    inputs = [args.osm, args.grid] + ([config_path] if config_path else [])
    for p in inputs:
        if not Path(p).is_file():
            raise UsageError(f"{p}: no such file")
    started = time.perf_counter()
    try:
        config = IngestConfig.load(config_path) if config_path else IngestConfig()
        grid = GridField.load(args.grid)
    except BetweenRideError as exc:
        raise UsageError(f"{exc} (config {config_path}, grid {args.grid})") from exc
    try:
        raw = parse_osm(Path(args.osm).read_bytes(), config)
    except BetweenRideError as exc:
        raise UsageError(f"{args.osm}: {exc}") from exc
    network, report = apply_grid(raw, grid)
    elapsed = time.perf_counter() - started
    manifest = _build_manifest(
        "ingest", inputs, [args.out], speed_scale=config.speed_scale, report=report.to_dict(),
        network_hash=network.content_hash(),
    )
    doc = network_to_dict(network)
    doc["manifest"] = manifest["id"]
    Path(args.out).write_text(_dump(doc), encoding="utf-8")
    _write_manifest(manifest, args.out, {"data_process_s": elapsed})
    print(f"{args.out}: {network.n} vertices, {len(network.edges)} edges "
          f"({report.discarded_nodes} nodes discarded outside the largest component)")
    return 0


def cmd_solve(args):
    params = _driver(args)
    started = time.perf_counter()
    base, network, prep = _prepared(args.network, params, args.speed_scale)
    prep_time = time.perf_counter() - started
    policy, sreport = solve(network, params, mode=args.mode, workers=args.workers)
    manifest = _build_manifest(
        "solve", [args.network], [args.out],
        driver={"wage": params.wage, "fuel_cost": params.fuel_cost}, speed_scale=args.speed_scale,
        seed=None, passes=sreport.passes, converged=sreport.converged, network_hash=network.content_hash(),
    )
    extra = {
        "speed_scale": args.speed_scale,
        "source_network_hash": base.content_hash(),
        "original_nodes": base.n,
        "preprocess": prep.to_dict(),
        "manifest": manifest["id"],
    }
    Path(args.out).write_text(_dump(policy_to_dict(policy, network, params, extra)), encoding="utf-8")
    _write_manifest(manifest, args.out, {"algorithm_s": sreport.wall_time, "preprocess_s": prep_time})
    print(f"{args.out}: solved {network.n} nodes ({prep.split_edges} splits) in {sreport.passes} passes, "
          f"{fmt(sreport.wall_time)} s")
    return 0


def _load_solved(policy_path, network_path):
    policy, params, doc = load_policy(policy_path)
    base, network, _ = _prepared(network_path, params, float(doc.get("speed_scale", 1.0)))
    if doc.get("source_network_hash") not in (None, base.content_hash()):
        raise UsageError(f"{policy_path} was not solved against {network_path}")
    if doc["network_hash"] != network.content_hash() or policy.n != network.n:
        raise UsageError(f"{policy_path} does not match the preprocessed form of {network_path}")
    return policy, params, network, doc


def resolve_start(network, spec, radius):
    if "," in spec:
        try:
            lat, lon = (float(v) for v in spec.split(","))
        except ValueError as exc:
            raise UsageError(f"bad coordinate {spec!r}; expected lat,lon") from exc
        best = min(range(network.n), key=lambda i: haversine(lat, lon, network.nodes[i].lat, network.nodes[i].lon))
        d = haversine(lat, lon, network.nodes[best].lat, network.nodes[best].lon)
        if d > radius:
            raise UsageError(f"no node within {radius:g} m of {lat},{lon} (nearest is {d:.0f} m away)")
        return best
    try:
        node = int(spec)
    except ValueError as exc:
        raise UsageError(f"bad start {spec!r}; expected a node id or lat,lon") from exc
    if not 0 <= node < network.n:
        raise UsageError(f"unknown node {node} (network has {network.n})")
    return node


def route_geojson(network, plan, manifest=None):
    coords = [[network.nodes[i].lon, network.nodes[i].lat] for i in plan.nodes]
    features = []
    if len(plan.nodes) >= 2:
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {
                "role": "route",
                "nodes": list(plan.nodes),
                "survival": list(plan.survival),
                "expected_profit": plan.expected_profit,
            },
        })
    end = plan.nodes[-1]
    features.append({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": coords[-1]},
        "properties": {"role": "terminal", "node": end, "action": str(plan.terminal), "survival": plan.survival[-1]},
    })
    doc = {"type": "FeatureCollection", "features": features}
    if manifest:
        doc["manifest"] = manifest
    return doc


def cmd_route(args):
    policy, params, network, doc = _load_solved(args.policy, args.network)
    start = resolve_start(network, args.start, args.radius)
    plan = policy_route(network, params, policy, start)
    if args.format == "geojson":
        text = _dump(route_geojson(network, plan, doc.get("manifest")))
    else:
        lines = [f"start {start}  expected_profit {fmt(plan.expected_profit)}  terminal {plan.terminal}",
                 "node\tlat\tlon\tsurvival"]
        for i, s in zip(plan.nodes, plan.survival):
            nd = network.nodes[i]
            lines.append(f"{i}\t{fmt(nd.lat)}\t{fmt(nd.lon)}\t{fmt(s)}")
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare(args):
    params = _driver(args)
    base, network, prep = _prepared(args.network, params, args.speed_scale)
    started = time.perf_counter()
    policy, sreport = solve(network, params)
    rows, summary = compare_with_baseline(network, params, policy, nodes=range(base.n))
    elapsed = time.perf_counter() - started
    manifest = _build_manifest(
        "compare", [args.network], [args.out],
        driver={"wage": params.wage, "fuel_cost": params.fuel_cost}, speed_scale=args.speed_scale, seed=None,
    )
    doc = {"format": "betweenride-comparison", "version": 1, "manifest": manifest["id"], "rows": rows, "summary": summary}
    Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    _write_manifest(manifest, args.out, {"algorithm_s": elapsed})
    print("node\toptimal\tbaseline\timprovement")
    for r in rows[: args.show]:
        flag = "\tunreachable" if r["unreachable"] else ""
        print(f"{r['node']}\t{fmt(r['optimal'])}\t{fmt(r['baseline'])}\t{fmt(r['improvement'])}{flag}")
    print(f"mean optimal {fmt(summary['mean_optimal'])}  mean baseline {fmt(summary['mean_baseline'])}  "
          f"mean improvement {fmt(summary['mean_improvement'])}  max improvement {fmt(summary['max_improvement'])}")
    if summary["unreachable"]:
        print(f"{summary['unreachable']} node(s) cannot reach target node {summary['target_node']}; "
              "excluded from the summary", file=sys.stderr)
        return 2
    return 0


def network_stats(network):
    lats = [nd.lat for nd in network.nodes]
    lons = [nd.lon for nd in network.nodes]
    lat0, lat1, lon0, lon1 = min(lats), max(lats), min(lons), max(lons)
    height = haversine(lat0, lon0, lat1, lon0)
    width = haversine((lat0 + lat1) / 2, lon0, (lat0 + lat1) / 2, lon1)
    return {
        "vertices": network.n,
        "edges": len(network.edges),
        "top_right": (lat1, lon1),
        "bottom_left": (lat0, lon0),
        "area_km2": height * width / 1e6,
    }


def _coord(lat, lon):
    return f"{abs(lat):.4f}{'N' if lat >= 0 else 'S'}, {abs(lon):.4f}{'E' if lon >= 0 else 'W'}"


def cmd_stats(args):
    network = load_network(args.network)
    s = network_stats(network)
    timings = {}
    paths = [manifest_path(args.network)] + [Path(p) for p in args.manifest]
    for p in paths:
        if p.is_file():
            timings.update(json.loads(p.read_text(encoding="utf-8")).get("timings", {}))

    def t(key):
        return f"{timings[key]:.3g}s" if key in timings else "unavailable"

    print(f"Network size\t{s['edges']} Edges, {s['vertices']} Vertices")
    print(f"Data-process time\t{t('data_process_s')}")
    print(f"Algorithm time\t{t('algorithm_s')}")
    print(f"Total area\t{s['area_km2']:.3g}km^2")
    print(f"Top-Right coordinates\t{_coord(*s['top_right'])}")
    print(f"Bottom-Left coordinates\t{_coord(*s['bottom_left'])}")
    return 0


def cmd_simulate(args):
    policy, params, network, _ = _load_solved(args.policy, args.network)
    start = resolve_start(network, args.start, args.radius)
    stats = simulate_policy(network, params, policy, start, args.episodes, args.seed)
    print(f"episodes {stats.episodes}  mean_profit {fmt(stats.mean_profit)}  std_error {fmt(stats.std_error)}  "
          f"analytic {fmt(policy.values[start])}  match_rate {fmt(stats.match_rate)}  "
          f"mean_time_to_match {fmt(stats.mean_time_to_match)}  rng {stats.rng} seed {stats.seed}")
    if args.out:
        Path(args.out).write_text(_dump(stats.to_dict()), encoding="utf-8")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="betweenride", description="Between-ride routing for ride-hailing drivers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="OSM XML + grid -> network file")
    p.add_argument("--osm", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--config", help=f"ingest config JSON (default: ${CONFIG_ENV}, else built-in defaults)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    def driver_args(p):
        p.add_argument("--network", required=True)
        p.add_argument("--wage", type=float, required=True, help="currency per minute")
        p.add_argument("--fuel", type=float, default=0.0, help="currency per meter")
        p.add_argument("--speed-scale", type=float, default=1.0, help="congestion multiplier on speeds")
        p.add_argument("--out", required=True)

    p = sub.add_parser("solve", help="optimal policy for every node")
    driver_args(p)
    p.add_argument("--mode", choices=["sequential", "synchronous"], default="sequential")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("route", help="optimal route from one start")
    p.add_argument("--policy", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--start", required=True, help="node id or lat,lon")
    p.add_argument("--format", choices=["text", "geojson"], default="text")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS_M, help="snap radius in meters for lat,lon starts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("compare", help="optimal vs shortest-route baseline per node")
    driver_args(p)
    p.add_argument("--show", type=int, default=20, help="table rows to print")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stats", help="network size, extent and last-run timings")
    p.add_argument("--network", required=True)
    p.add_argument("--manifest", action="append", default=[], help="extra manifest(s) to read timings from")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("simulate", help="Monte Carlo check of a solved policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--start", required=True)
    p.add_argument("--episodes", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS_M)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    scale = getattr(args, "speed_scale", 1.0)
    if not (scale > 0 and math.isfinite(scale)):
        print("error: --speed-scale must be a positive number", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CycleDetected, CyclicPolicy, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, BetweenRideError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
