"""OpenStreetMap XML ingestion and grid-based pickup/profit assignment."""

from __future__ import annotations

import bisect
import json
import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyExtract, FormatError, InvalidGrid, MalformedXml
from .network import EdgeParams, RoadEdge, RoadNode, build_network, weak_components

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
MPH = 1609.344 / 60.0  # meters per minute
KMH = 1000.0 / 60.0
KNOT = 1852.0 / 60.0

_DEFAULT_MPH = {
    "motorway": 55,
    "motorway_link": 35,
    "trunk": 45,
    "trunk_link": 30,
    "primary": 35,
    "primary_link": 25,
    "secondary": 30,
    "secondary_link": 25,
    "tertiary": 30,
    "tertiary_link": 25,
    "unclassified": 25,
    "residential": 25,
    "living_street": 15,
    "service": 15,
}
DEFAULT_SPEEDS = {tag: mph * MPH for tag, mph in _DEFAULT_MPH.items()}
DEFAULT_WHITELIST = frozenset(DEFAULT_SPEEDS) - {"service"}

_IMPLIED_ONEWAY = {"motorway", "motorway_link"}


@dataclass(frozen=True)
class IngestConfig:
    highway_whitelist: frozenset = DEFAULT_WHITELIST
    default_speeds: dict = field(default_factory=lambda: dict(DEFAULT_SPEEDS))
    bbox: tuple | None = None  # (lat_min, lon_min, lat_max, lon_max)
    speed_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "highway_whitelist", frozenset(self.highway_whitelist))
        missing = sorted(t for t in self.highway_whitelist if t not in self.default_speeds)
        if missing:
            raise FormatError(f"default_speeds has no entry for whitelisted tags {missing}")
        if any(not (v > 0) for v in self.default_speeds.values()):
            raise FormatError("default speeds must be positive (meters per minute)")
        if not (self.speed_scale > 0 and math.isfinite(self.speed_scale)):
            raise FormatError(f"speed_scale must be positive, got {self.speed_scale}")
        if self.bbox is not None:
            lat0, lon0, lat1, lon1 = self.bbox
            if not (lat0 < lat1 and lon0 < lon1):
                raise FormatError(f"degenerate bbox {self.bbox}")
            object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @classmethod
    def from_dict(cls, d):
        return cls(
            highway_whitelist=frozenset(d.get("highway_whitelist", DEFAULT_WHITELIST)),
            default_speeds={k: float(v) for k, v in d.get("default_speeds", DEFAULT_SPEEDS).items()},
            bbox=tuple(d["bbox"]) if d.get("bbox") else None,
            speed_scale=float(d.get("speed_scale", 1.0)),
        )

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON at line {exc.lineno}") from exc
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class GridField:
    """Rectangular grid of (Q, R) cells. Row 0 is the southern edge, cells are row-major."""

    bbox: tuple
    rows: int
    cols: int
    cells: tuple  # of (Q, R)

    def __post_init__(self):
        try:
            lat0, lon0, lat1, lon1 = (float(v) for v in self.bbox)
        except (TypeError, ValueError) as exc:
            raise InvalidGrid(f"bad bbox {self.bbox!r}") from exc
        if not (lat0 < lat1 and lon0 < lon1):
            raise InvalidGrid(f"degenerate bbox {self.bbox}")
        if self.rows < 1 or self.cols < 1:
            raise InvalidGrid("rows and cols must be >= 1")
        if len(self.cells) != self.rows * self.cols:
            raise InvalidGrid(f"expected {self.rows * self.cols} cells, got {len(self.cells)}")
        for i, (q, r) in enumerate(self.cells):
            if not (math.isfinite(q) and math.isfinite(r)) or q < 0 or r <= 0:
                raise InvalidGrid(f"cell {i}: need Q >= 0 and R > 0, got Q={q}, R={r}")
        object.__setattr__(self, "bbox", (lat0, lon0, lat1, lon1))

    @classmethod
    def uniform(cls, bbox, q, r):
        return cls(tuple(bbox), 1, 1, ((q, r),))

    @classmethod
    def from_dict(cls, d):
        try:
            cells = tuple((float(c[0]), float(c[1])) if isinstance(c, (list, tuple)) else (float(c["Q"]), float(c["R"])) for c in d["cells"])
            return cls(tuple(d["bbox"]), int(d["rows"]), int(d["cols"]), cells)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InvalidGrid(f"malformed grid: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InvalidGrid(f"{path}: invalid JSON at line {exc.lineno}") from exc

    def cell_index(self, lat, lon):
        """(index, inside) for the cell containing the point; outside points clamp to the border."""
        lat0, lon0, lat1, lon1 = self.bbox
        inside = lat0 <= lat <= lat1 and lon0 <= lon <= lon1
        r = min(self.rows - 1, max(0, int((lat - lat0) / (lat1 - lat0) * self.rows)))
        c = min(self.cols - 1, max(0, int((lon - lon0) / (lon1 - lon0) * self.cols)))
        return r * self.cols + c, inside

    def lookup(self, lat, lon):
        return self.cells[self.cell_index(lat, lon)[0]]


@dataclass(frozen=True)
class RawSegment:
    source: int
    target: int
    length: float
    speed: float
    highway: str
    mid_lat: float
    mid_lon: float


@dataclass(frozen=True)
class RawGraph:
    osm_ids: tuple[int, ...]
    coords: tuple[tuple[float, float], ...]
    segments: tuple[RawSegment, ...]
    dropped_zero_length: int = 0


@dataclass
class IngestReport:
    nodes: int = 0
    edges: int = 0
    discarded_nodes: int = 0
    discarded_edges: int = 0
    clipped_points: int = 0
    components: int = 0

    def to_dict(self):
        return dict(self.__dict__)


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


_SPEED_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(mph|km/h|kmh|kph|knots)?\s*$", re.IGNORECASE)


def parse_maxspeed(value):
    """OSM maxspeed tag to meters per minute; None if absent or symbolic ("none", "walk", "RU:urban")."""
    if not value:
        return None
    m = _SPEED_RE.match(value.split(";")[0])
    if not m:
        return None
    number = float(m.group(1))
    unit = (m.group(2) or "km/h").lower()
    if number <= 0:
        return None
    factor = {"mph": MPH, "knots": KNOT}.get(unit, KMH)
    return number * factor


def _oneway(tags):
    ow = tags.get("oneway", "").lower()
    if ow in ("yes", "true", "1"):
        return 1
    if ow in ("-1", "reverse"):
        return -1
    if ow == "no":
        return 0
    if tags.get("junction") == "roundabout" or tags.get("highway") in _IMPLIED_ONEWAY:
        return 1
    return 0


def _byte_offset(data, line, col):
    lines = data.split(b"\n")
    return sum(len(x) + 1 for x in lines[: max(0, line - 1)]) + col


def _midpoint(points, total):
    """Point halfway along a polyline of (lat, lon, cumulative length)."""
    half = total / 2
    cum = [c for _, _, c in points]
    i = max(1, bisect.bisect_left(cum, half))
    (la0, lo0, c0), (la1, lo1, c1) = points[i - 1], points[i]
    f = 0.0 if c1 == c0 else (half - c0) / (c1 - c0)
    return la0 + f * (la1 - la0), lo0 + f * (lo1 - lo0)


def parse_osm(xml_bytes: bytes, config: IngestConfig) -> RawGraph:
    """Directed road segments between intersections from an OSM XML extract."""
    if isinstance(xml_bytes, str):
        xml_bytes = xml_bytes.encode()
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        line, col = exc.position
        offset = _byte_offset(xml_bytes, line, col)
        raise MalformedXml(f"malformed OSM XML at line {line}, column {col} (byte {offset}): {exc}", offset) from exc

    coords = {}
    for nd in root.iter("node"):
        try:
            coords[int(nd.get("id"))] = (float(nd.get("lat")), float(nd.get("lon")))
        except (TypeError, ValueError) as exc:
            raise MalformedXml(f"node element with bad id/lat/lon: {nd.attrib}") from exc

    bbox = config.bbox

    def keep(ref):
        if ref not in coords:
            return False
        if bbox is None:
            return True
        lat, lon = coords[ref]
        return bbox[0] <= lat <= bbox[2] and bbox[1] <= lon <= bbox[3]

    ways = []
    for way in root.iter("way"):
        tags = {t.get("k"): t.get("v") for t in way.iter("tag")}
        hw = tags.get("highway")
        if hw not in config.highway_whitelist:
            continue
        run = []
        for nd in way.iter("nd"):
            ref = int(nd.get("ref"))
            if keep(ref):
                run.append(ref)
            else:
                if len(run) >= 2:
                    ways.append((run, tags))
                run = []
        if len(run) >= 2:
            ways.append((run, tags))
    if not ways:
        raise EmptyExtract("extract contains no ways with a whitelisted highway tag")

    use = {}
    for refs, _ in ways:
        for ref in refs:
            use[ref] = use.get(ref, 0) + 1
    junction = {ref for ref, c in use.items() if c >= 2}
    for refs, _ in ways:
        junction.add(refs[0])
        junction.add(refs[-1])

    pieces = []  # (from_ref, to_ref, length, midpoint, tags)
    dropped = 0
    for refs, tags in ways:
        start = 0
        pts = [(*coords[refs[0]], 0.0)]
        for i in range(1, len(refs)):
            la, lo = coords[refs[i]]
            pla, plo, pc = pts[-1]
            pts.append((la, lo, pc + haversine(pla, plo, la, lo)))
            if refs[i] in junction:
                length = pts[-1][2]
                if length > 0 and refs[start] != refs[i]:
                    pieces.append((refs[start], refs[i], length, _midpoint(pts, length), tags))
                else:
                    dropped += 1
                start = i
                pts = [(la, lo, 0.0)]

    used = sorted({a for a, *_ in pieces} | {b for _, b, *_ in pieces})
    if not used:
        raise EmptyExtract("no usable road segments after splitting")
    index = {ref: i for i, ref in enumerate(used)}
    segments = []
    for a, b, length, (mla, mlo), tags in pieces:
        hw = tags["highway"]
        speed = parse_maxspeed(tags.get("maxspeed")) or config.default_speeds[hw]
        speed *= config.speed_scale
        direction = _oneway(tags)
        if direction >= 0:
            segments.append(RawSegment(index[a], index[b], length, speed, hw, mla, mlo))
        if direction <= 0:
            segments.append(RawSegment(index[b], index[a], length, speed, hw, mla, mlo))
    return RawGraph(tuple(used), tuple(coords[r] for r in used), tuple(segments), dropped)


def apply_grid(raw: RawGraph, grid: GridField):
    """Attach (Q, R) from the grid and keep the largest weakly connected component.

    Returns ``(network, report)``. Points outside the grid take the nearest
    border cell and are counted in ``report.clipped_points``.
    """
    report = IngestReport()
    n = len(raw.coords)
    comps = weak_components(n, [RoadEdge(s.source, s.target, None) for s in raw.segments])
    comps.sort(key=lambda c: (-len(c), c[0]))
    report.components = len(comps)
    main = comps[0]
    renumber = {old: new for new, old in enumerate(main)}
    report.discarded_nodes = n - len(main)

    nodes = []
    for old in main:
        lat, lon = raw.coords[old]
        idx, inside = grid.cell_index(lat, lon)
        report.clipped_points += not inside
        q, r = grid.cells[idx]
        nodes.append(RoadNode(renumber[old], lat, lon, EdgeParams.wait(q, r)))
    edges = []
    for s in raw.segments:
        if s.source not in renumber:
            report.discarded_edges += 1
            continue
        idx, inside = grid.cell_index(s.mid_lat, s.mid_lon)
        report.clipped_points += not inside
        q, r = grid.cells[idx]
        edges.append(RoadEdge(renumber[s.source], renumber[s.target], EdgeParams.road(q, r, s.length, s.speed)))
    if report.clipped_points:
        log.warning("%d points fall outside the grid bbox and were assigned border cells", report.clipped_points)
    network = build_network(nodes, edges, allow_parallel=True)
    report.nodes, report.edges = network.n, len(network.edges)
    return network, report


def ingest(xml_bytes, grid, config):
    return apply_grid(parse_osm(xml_bytes, config), grid)
