"""GPS-trace pipeline: cleaning, occupied-trip extraction, demand gridding,
exponential inter-arrival fitting, and cluster-based network extraction.

A synthetic trace generator stands in for proprietary fleet data so the
whole pipeline can run end to end: it emits vehicles driving occupied trips
between configured hotspots with exponential inter-arrival times.

Raw coordinates are WGS84 degrees; everything downstream works in planar
meters via a local equirectangular projection about the bounding-box center
(sub-0.1% distortion at city scale).
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.stats import expon, kstest

from .demand import PathDemand
from .errors import InputError
from .network import Node, RoadNetwork

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
GPS_COLUMNS = ["VehicleNum", "Time", "Longtitude", "Latitude", "Speed", "Degrees", "Status"]

# default spatial filter, WGS84 degrees
DEFAULT_BBOX = (120.852326, 122.118227, 30.691701, 31.874634)

STATUS_BLIP_WINDOW_S = 120.0
OCCUPIED_STATUS = 1
KS_ALPHA = 0.05


@dataclass(frozen=True)
class GpsRecord:
    vehicle_id: int
    timestamp: datetime
    longitude: float
    latitude: float
    speed_kmh: float
    heading_deg: float
    status: int


@dataclass
class FilterReport:
    input_count: int
    null_removed: int
    bbox_removed: int
    status_removed: int

    @property
    def output_count(self) -> int:
        return self.input_count - self.null_removed - self.bbox_removed - self.status_removed

    def summary(self) -> str:
        return (
            f"input records:      {self.input_count}\n"
            f"null filtered:      {self.null_removed}\n"
            f"bbox filtered:      {self.bbox_removed}\n"
            f"status filtered:    {self.status_removed}\n"
            f"output records:     {self.output_count}\n"
        )


@dataclass
class Trip:
    """Maximal occupied run of one vehicle; at least two records."""

    vehicle_id: int
    records: list[GpsRecord]

    def __post_init__(self) -> None:
        if len(self.records) < 2:
            raise InputError("a trip needs at least two records")
        ts = [r.timestamp for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InputError("trip timestamps must be strictly increasing")
        if any(r.vehicle_id != self.vehicle_id for r in self.records):
            raise InputError("trip mixes vehicles")


@dataclass
class GriddedDemand:
    origin_cell: tuple[int, int]
    dest_cell: tuple[int, int]
    timestamps: list[datetime]
    lambda_per_s: float | None = None
    ks_pvalue: float | None = None
    accepted: bool | None = None

    @property
    def occurrences(self) -> int:
        return len(self.timestamps)


class Projection:
    """Local equirectangular projection: degrees to meters and back."""

    def __init__(self, bbox: tuple[float, float, float, float]):
        lon_min, lon_max, lat_min, lat_max = bbox
        self.lon0 = 0.5 * (lon_min + lon_max)
        self.lat0 = 0.5 * (lat_min + lat_max)
        self.m_per_deg_lat = math.pi * EARTH_RADIUS_M / 180.0
        self.m_per_deg_lon = self.m_per_deg_lat * math.cos(math.radians(self.lat0))

    def to_meters(self, lon: float, lat: float) -> tuple[float, float]:
        return (lon - self.lon0) * self.m_per_deg_lon, (lat - self.lat0) * self.m_per_deg_lat

    def to_degrees(self, x_m: float, y_m: float) -> tuple[float, float]:
        return self.lon0 + x_m / self.m_per_deg_lon, self.lat0 + y_m / self.m_per_deg_lat


def load_gps_csv(path: str | Path) -> list[dict]:
    """Read raw GPS rows as dicts; parsing failures are decided in clean()."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"GPS file not found: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        have = reader.fieldnames or []
        missing = [c for c in GPS_COLUMNS if c not in have]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        return list(reader)


def save_gps_csv(records: Iterable[GpsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GPS_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.vehicle_id,
                    r.timestamp.strftime(TIME_FORMAT),
                    f"{r.longitude:.6f}",
                    f"{r.latitude:.6f}",
                    f"{r.speed_kmh:.1f}",
                    f"{r.heading_deg:.1f}",
                    r.status,
                ]
            )


def _parse_row(row: dict) -> GpsRecord | None:
    try:
        values = [row[c] for c in GPS_COLUMNS]
        if any(v is None or str(v).strip() in ("", "nan", "NaN", "Nan") for v in values):
            return None
        return GpsRecord(
            vehicle_id=int(float(row["VehicleNum"])),
            timestamp=datetime.strptime(row["Time"].strip(), TIME_FORMAT),
            longitude=float(row["Longtitude"]),
            latitude=float(row["Latitude"]),
            speed_kmh=float(row["Speed"]),
            heading_deg=float(row["Degrees"]),
            status=int(float(row["Status"])),
        )
    except (KeyError, TypeError, ValueError):
        return None


def clean(
    rows: Sequence[dict | GpsRecord],
    bbox: tuple[float, float, float, float] = DEFAULT_BBOX,
    blip_window_s: float = STATUS_BLIP_WINDOW_S,
) -> tuple[list[GpsRecord], FilterReport]:
    """Apply the three cleaning filters in order.

    1. Drop rows with null or unparseable fields.
    2. Drop points outside the configured bounding box.
    3. Drop status blips: a record whose status differs from both temporal
       neighbors of the same vehicle, the neighbors agreeing with each other
       and both within ``blip_window_s``.
    """
    input_count = len(rows)
    parsed: list[GpsRecord] = []
    null_removed = 0
    for row in rows:
        rec = row if isinstance(row, GpsRecord) else _parse_row(row)
        if rec is None:
            null_removed += 1
        else:
            parsed.append(rec)

    lon_min, lon_max, lat_min, lat_max = bbox
    in_box = [
        r
        for r in parsed
        if lon_min <= r.longitude <= lon_max and lat_min <= r.latitude <= lat_max
    ]
    bbox_removed = len(parsed) - len(in_box)

    by_vehicle: dict[int, list[GpsRecord]] = {}
    for r in in_box:
        by_vehicle.setdefault(r.vehicle_id, []).append(r)
    drop: set[int] = set()
    for recs in by_vehicle.values():
        recs.sort(key=lambda r: r.timestamp)
        for prev, cur, nxt in zip(recs, recs[1:], recs[2:]):
            if (
                cur.status != prev.status
                and cur.status != nxt.status
                and prev.status == nxt.status
                and (cur.timestamp - prev.timestamp).total_seconds() <= blip_window_s
                and (nxt.timestamp - cur.timestamp).total_seconds() <= blip_window_s
            ):
                drop.add(id(cur))
    kept = [r for r in in_box if id(r) not in drop]
    status_removed = len(in_box) - len(kept)

    report = FilterReport(input_count, null_removed, bbox_removed, status_removed)
    return kept, report


def extract_trips(records: Sequence[GpsRecord], occupied_status: int = OCCUPIED_STATUS) -> list[Trip]:
    """Maximal occupied runs per vehicle; single-record runs carry no path
    and are dropped."""
    by_vehicle: dict[int, list[GpsRecord]] = {}
    for r in records:
        by_vehicle.setdefault(r.vehicle_id, []).append(r)
    trips = []
    for vid in sorted(by_vehicle):
        recs = sorted(by_vehicle[vid], key=lambda r: r.timestamp)
        run: list[GpsRecord] = []
        for r in recs:
            if r.status == occupied_status:
                if run and r.timestamp <= run[-1].timestamp:
                    continue  # duplicate timestamp, keep the first
                run.append(r)
            else:
                if len(run) >= 2:
                    trips.append(Trip(vid, run))
                run = []
        if len(run) >= 2:
            trips.append(Trip(vid, run))
    return trips


def grid_demands(
    trips: Sequence[Trip],
    cell_size_m: float,
    projection: Projection,
    min_occurrences: int = 1,
) -> list[GriddedDemand]:
    """Aggregate trips into cell-pair demands and fit their arrival process.

    Cells are half-open squares: a point exactly on a boundary belongs to
    the higher-index cell. Trips starting and ending in the same cell are
    degenerate and discarded. Demands with at least two occurrences get an
    exponential fit of their inter-arrival gaps.
    """
    if not cell_size_m > 0:
        raise InputError("cell size must be positive")
    buckets: dict[tuple[tuple[int, int], tuple[int, int]], list[datetime]] = {}
    for trip in trips:
        first, last = trip.records[0], trip.records[-1]
        ox, oy = projection.to_meters(first.longitude, first.latitude)
        dx_, dy_ = projection.to_meters(last.longitude, last.latitude)
        o_cell = (math.floor(ox / cell_size_m), math.floor(oy / cell_size_m))
        d_cell = (math.floor(dx_ / cell_size_m), math.floor(dy_ / cell_size_m))
        if o_cell == d_cell:
            continue
        buckets.setdefault((o_cell, d_cell), []).append(first.timestamp)

    demands = []
    for (o_cell, d_cell), stamps in sorted(buckets.items()):
        if len(stamps) < min_occurrences:
            continue
        gd = GriddedDemand(o_cell, d_cell, sorted(stamps))
        if len(stamps) >= 2:
            epochs = [s.timestamp() for s in gd.timestamps]
            try:
                lam, p, ok = fit_exponential(epochs)
                gd.lambda_per_s, gd.ks_pvalue, gd.accepted = lam, p, ok
            except InputError:
                gd.accepted = False
        demands.append(gd)
    return demands


def fit_exponential(timestamps: Sequence[float]) -> tuple[float, float, bool]:
    """Rate estimate and goodness of fit for an arrival-time sequence.

    The rate is the reciprocal mean inter-arrival gap; a one-sample
    Kolmogorov-Smirnov test checks the gaps against that fitted exponential
    and accepts when p > 0.05. The estimated-parameter bias makes the test
    slightly lenient; acceptable for a screening statistic.
    """
    if len(timestamps) < 2:
        raise InputError("need at least two timestamps")
    ts = sorted(float(t) for t in timestamps)
    gaps = np.diff(ts)
    mean_gap = float(np.mean(gaps))
    if mean_gap <= 0:
        raise InputError("all inter-arrival gaps are zero; cannot fit a rate")
    lam = 1.0 / mean_gap
    result = kstest(gaps, expon(scale=mean_gap).cdf)
    p = float(result.pvalue)
    return lam, p, p > KS_ALPHA


def extract_network(
    records: Sequence[GpsRecord],
    k_clusters: int,
    projection: Projection,
    seed: int = 0,
    candidate_rule=None,
    max_reseeds: int = 10,
) -> RoadNetwork:
    """Cluster GPS points into key nodes and connect them along trajectories.

    An edge (u, v) exists when consecutive records of one vehicle fall in
    clusters u then v; its length is the mean observed travel distance
    center-to-center through the crossing segment, which dominates the
    straight-line chord. Empty clusters are re-seeded a few times, then
    dropped (merged away). ``candidate_rule`` maps a node id and its center
    to a candidate flag; default marks every node.
    """
    if k_clusters < 2:
        raise InputError("need at least two clusters")
    pts = np.array([projection.to_meters(r.longitude, r.latitude) for r in records])
    if len(pts) < k_clusters:
        raise InputError(f"{len(pts)} points cannot form {k_clusters} clusters")

    centers = labels = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # kmeans2 warns on empty clusters
        for attempt in range(max_reseeds + 1):
            centers, labels = kmeans2(
                pts, k_clusters, minit="++", seed=seed + attempt, iter=100
            )
            occupied = np.unique(labels)
            if len(occupied) == k_clusters:
                break
    occupied = np.unique(labels)
    if len(occupied) < k_clusters:
        logger.info(
            "dropping %d empty clusters after %d reseeds", k_clusters - len(occupied), max_reseeds
        )
        remap = {int(old): new for new, old in enumerate(occupied)}
        labels = np.array([remap[int(l)] for l in labels])
        centers = centers[occupied]

    n_nodes = centers.shape[0]
    transitions: dict[tuple[int, int], list[float]] = {}
    by_vehicle: dict[int, list[tuple[datetime, int, float, float]]] = {}
    for r, lab, (x, y) in zip(records, labels, pts):
        by_vehicle.setdefault(r.vehicle_id, []).append((r.timestamp, int(lab), x, y))
    for seq in by_vehicle.values():
        seq.sort(key=lambda item: item[0])
        for (_, u, x1, y1), (_, v, x2, y2) in zip(seq, seq[1:]):
            if u == v:
                continue
            cu, cv = centers[u], centers[v]
            dist = (
                math.hypot(x1 - cu[0], y1 - cu[1])
                + math.hypot(x2 - x1, y2 - y1)
                + math.hypot(cv[0] - x2, cv[1] - y2)
            )
            key = (min(u, v), max(u, v))
            transitions.setdefault(key, []).append(dist)

    if candidate_rule is None:
        candidate_rule = lambda node_id, center: True
    nodes = [
        Node(i, float(centers[i][0]), float(centers[i][1]), bool(candidate_rule(i, centers[i])))
        for i in range(n_nodes)
    ]
    edges = []
    for (u, v), dists in sorted(transitions.items()):
        length = float(np.mean(dists))
        if length <= 0:
            length = max(float(np.hypot(*(centers[u] - centers[v]))), 1.0)
        edges.append((u, v, length))
    return RoadNetwork(nodes, edges)


@dataclass
class SynthScenario:
    """Synthetic city: hotspots and Poisson trip flows between them."""

    hotspots: list[tuple[float, float]]  # (lon, lat)
    flows: list[tuple[int, int, float]]  # (origin idx, dest idx, trips per hour)
    duration_h: float = 24.0
    start: datetime = field(default_factory=lambda: datetime(2020, 1, 1))
    sample_period_s: float = 60.0
    speed_mps: float = 10.0
    jitter_m: float = 150.0
    idle_records: int = 2

    def __post_init__(self) -> None:
        if len(self.hotspots) < 2:
            raise InputError("need at least two hotspots")
        for o, d, rate in self.flows:
            if not (0 <= o < len(self.hotspots) and 0 <= d < len(self.hotspots)):
                raise InputError(f"flow ({o}, {d}) references unknown hotspot")
            if o == d:
                raise InputError("flow origin equals destination")
            if not rate > 0:
                raise InputError("flow rate must be positive")


def synth_traces(scenario: SynthScenario, seed: int, bbox=DEFAULT_BBOX) -> list[GpsRecord]:
    """Generate GPS records of occupied trips between hotspots.

    Trip start times per flow follow a Poisson process at the configured
    rate; each trip is one fresh vehicle driving a straight line at constant
    speed, sampled on a fixed period, with seeded positional jitter and a
    couple of idle records on each side so occupancy transitions exist.
    Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    proj = Projection(bbox)
    hotspots_m = [proj.to_meters(lon, lat) for lon, lat in scenario.hotspots]
    horizon_s = scenario.duration_h * 3600.0

    records: list[GpsRecord] = []
    vehicle_id = 10_000
    for o, d, rate_per_h in scenario.flows:
        rate_per_s = rate_per_h / 3600.0
        t = rng.exponential(1.0 / rate_per_s)
        while t < horizon_s:
            vehicle_id += 1
            records.extend(
                _one_trip(scenario, proj, rng, vehicle_id, hotspots_m[o], hotspots_m[d], t)
            )
            t += rng.exponential(1.0 / rate_per_s)
    records.sort(key=lambda r: (r.timestamp, r.vehicle_id))
    return records


def _one_trip(scenario, proj, rng, vehicle_id, origin_m, dest_m, start_s) -> list[GpsRecord]:
    ox, oy = origin_m
    dx_, dy_ = dest_m
    length = math.hypot(dx_ - ox, dy_ - oy)
    travel_s = length / scenario.speed_mps
    n_samples = max(2, int(travel_s / scenario.sample_period_s) + 1)
    heading = math.degrees(math.atan2(dy_ - oy, dx_ - ox)) % 360.0

    out = []

    def emit(offset_s: float, x: float, y: float, status: int, speed: float) -> None:
        jx, jy = rng.normal(0.0, scenario.jitter_m, 2)
        lon, lat = proj.to_degrees(x + jx, y + jy)
        out.append(
            GpsRecord(
                vehicle_id,
                scenario.start + timedelta(seconds=start_s + offset_s),
                lon,
                lat,
                speed,
                heading,
                status,
            )
        )

    for i in range(scenario.idle_records, 0, -1):
        emit(-i * scenario.sample_period_s, ox, oy, 0, 0.0)
    for i in range(n_samples):
        frac = i / (n_samples - 1)
        emit(
            frac * travel_s,
            ox + frac * (dx_ - ox),
            oy + frac * (dy_ - oy),
            OCCUPIED_STATUS,
            scenario.speed_mps * 3.6,
        )
    for i in range(1, scenario.idle_records + 1):
        emit(travel_s + i * scenario.sample_period_s, dx_, dy_, 0, 0.0)
    return out


def demands_from_grid(
    gridded: Sequence[GriddedDemand],
    net: RoadNetwork,
    projection: Projection,
    cell_size_m: float,
    battery_pmf: dict[float, float],
    accepted_only: bool = False,
) -> list[PathDemand]:
    """Map cell-pair demands onto network nodes.

    Each cell maps to the network node nearest its center; pairs that
    collapse onto one node are dropped. The battery pmf is exogenous
    (GPS traces carry no charge information).
    """
    centers = np.array([(n.x_m, n.y_m) for n in net.nodes])
    ids = [n.node_id for n in net.nodes]

    def nearest(cell: tuple[int, int]) -> int:
        cx = (cell[0] + 0.5) * cell_size_m
        cy = (cell[1] + 0.5) * cell_size_m
        k = int(np.argmin(np.sum((centers - (cx, cy)) ** 2, axis=1)))
        return ids[k]

    merged: dict[tuple[int, int], float] = {}
    for gd in gridded:
        if gd.lambda_per_s is None:
            continue
        if accepted_only and not gd.accepted:
            continue
        o, d = nearest(gd.origin_cell), nearest(gd.dest_cell)
        if o == d:
            continue
        merged[(o, d)] = merged.get((o, d), 0.0) + gd.lambda_per_s
    return [
        PathDemand(o, d, rate, dict(battery_pmf)) for (o, d), rate in sorted(merged.items())
    ]


def write_fit_report(gridded: Sequence[GriddedDemand], path: str | Path) -> float:
    """Per-demand fit CSV plus the fraction of fitted demands passing the KS
    test; that pass rate is returned."""
    fitted = [g for g in gridded if g.lambda_per_s is not None]
    passed = sum(1 for g in fitted if g.accepted)
    pass_rate = passed / len(fitted) if fitted else 0.0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["origin_cell", "dest_cell", "occurrences", "lambda_per_s", "ks_pvalue", "accepted"])
        for g in gridded:
            w.writerow(
                [
                    f"{g.origin_cell[0]}|{g.origin_cell[1]}",
                    f"{g.dest_cell[0]}|{g.dest_cell[1]}",
                    g.occurrences,
                    "" if g.lambda_per_s is None else repr(g.lambda_per_s),
                    "" if g.ks_pvalue is None else repr(g.ks_pvalue),
                    "" if g.accepted is None else int(g.accepted),
                ]
            )
    return pass_rate
