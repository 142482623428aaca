"""Road network model: nodes, weighted undirected edges, shortest distances,
and admissible station sets for path demands.

Distances are exact all-pairs shortest paths over edge lengths, computed once
and reused by every evaluator. A station node j is admissible for an
origin-destination pair when the detour through j stays within the allowed
maximum, and reachable for a battery level b when the origin-to-station
distance does not exceed the driving range b / consumption.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import InputError


@dataclass(frozen=True)
class Node:
    node_id: int
    x_m: float
    y_m: float
    is_candidate: bool


@dataclass
class RoadNetwork:
    """Connected undirected graph with planar coordinates in meters.

    ``nodes`` carry a candidate flag marking where a station may be built;
    the candidate set must be non-empty. Edge lengths are strictly positive
    meters.
    """

    nodes: list[Node]
    edges: list[tuple[int, int, float]]

    def __post_init__(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InputError(f"duplicate node ids: {dupes}")
        if not ids:
            raise InputError("network has no nodes")
        id_set = set(ids)
        for u, v, length in self.edges:
            if u not in id_set or v not in id_set:
                raise InputError(f"edge ({u}, {v}) references unknown node")
            if not length > 0:
                raise InputError(f"edge ({u}, {v}) has non-positive length {length}")
        if not self.candidates:
            raise InputError("candidate set is empty")

    @property
    def node_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes]

    @property
    def candidates(self) -> frozenset[int]:
        return frozenset(n.node_id for n in self.nodes if n.is_candidate)

    def coords(self) -> dict[int, tuple[float, float]]:
        return {n.node_id: (n.x_m, n.y_m) for n in self.nodes}

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) over node coordinates, meters."""
        xs = [n.x_m for n in self.nodes]
        ys = [n.y_m for n in self.nodes]
        return min(xs), min(ys), max(xs), max(ys)


class DistanceMatrix:
    """All-pairs shortest-path distances in meters, indexed by node id."""

    def __init__(self, node_ids: Sequence[int], matrix: np.ndarray):
        self.index = {nid: i for i, nid in enumerate(node_ids)}
        self.node_ids = list(node_ids)
        self.matrix = matrix

    def dist(self, u: int, v: int) -> float:
        return float(self.matrix[self.index[u], self.index[v]])

    def detour(self, origin: int, station: int, dest: int) -> float:
        """Extra meters traveled when swapping at ``station`` en route."""
        return self.dist(origin, station) + self.dist(station, dest) - self.dist(origin, dest)


def build_distance_matrix(net: RoadNetwork) -> DistanceMatrix:
    """Exact all-pairs shortest distances over the network's edge lengths.

    Rejects disconnected networks, listing the nodes of the smallest
    component so the offending piece is easy to spot.
    """
    ids = net.node_ids
    index = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    rows, cols, vals = [], [], []
    for u, v, length in net.edges:
        iu, iv = index[u], index[v]
        rows.extend((iu, iv))
        cols.extend((iv, iu))
        vals.extend((length, length))
    graph = csr_matrix((vals, (rows, cols)), shape=(n, n))

    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        comps: dict[int, list[int]] = {}
        for nid, lab in zip(ids, labels):
            comps.setdefault(int(lab), []).append(nid)
        smallest = min(comps.values(), key=lambda c: (len(c), c))
        raise InputError(
            f"network is disconnected ({n_comp} components); "
            f"smallest component: {sorted(smallest)}"
        )

    # dijkstra keeps duplicate (u, v) entries at their minimum weight
    dist = dijkstra(graph, directed=False)
    return DistanceMatrix(ids, dist)


@dataclass
class AdmissibleSets:
    """Admissible stations per demand, with and without the range restriction.

    ``an[(o, d)]`` holds candidates within the detour bound for the pair;
    ``an_b[(o, d, b)]`` additionally requires the station to be reachable on
    battery level b. ``ai[j]`` inverts ``an``: the demands admitting j.
    """

    an: dict[tuple[int, int], frozenset[int]]
    an_b: dict[tuple[int, int, float], frozenset[int]]

    def ai(self, station: int) -> frozenset[tuple[int, int]]:
        return frozenset(od for od, js in self.an.items() if station in js)


def admissible_sets(
    net: RoadNetwork,
    dm: DistanceMatrix,
    demands: Iterable,
    d_max_m: float,
    consumption_kwh_per_m: float,
    battery_levels: Sequence[float],
) -> AdmissibleSets:
    """Compute detour-admissible and range-admissible station sets.

    ``demands`` is any iterable of objects with ``origin`` and ``dest``
    attributes. Empty sets are legal: a demand with no reachable built
    station is lost, not an error.
    """
    if d_max_m < 0:
        raise InputError(f"d_max must be nonnegative, got {d_max_m}")
    if not consumption_kwh_per_m > 0:
        raise InputError(f"consumption must be positive, got {consumption_kwh_per_m}")
    levels = sorted(set(float(b) for b in battery_levels))
    if levels and levels[0] < 0:
        raise InputError(f"battery levels must be nonnegative, got {levels[0]}")

    cands = sorted(net.candidates)
    an: dict[tuple[int, int], frozenset[int]] = {}
    an_b: dict[tuple[int, int, float], frozenset[int]] = {}
    for dem in demands:
        o, d = dem.origin, dem.dest
        if (o, d) in an:
            continue
        base = dm.dist(o, d) + d_max_m
        ok = [j for j in cands if dm.dist(o, j) + dm.dist(j, d) <= base]
        an[(o, d)] = frozenset(ok)
        for b in levels:
            reach = b / consumption_kwh_per_m
            an_b[(o, d, b)] = frozenset(j for j in ok if dm.dist(o, j) <= reach)
    return AdmissibleSets(an, an_b)


def load_network(nodes_csv: str | Path, edges_csv: str | Path) -> RoadNetwork:
    """Read the two-file network format (``nodes.csv`` + ``edges.csv``)."""
    nodes_csv, edges_csv = Path(nodes_csv), Path(edges_csv)
    for p in (nodes_csv, edges_csv):
        if not p.exists():
            raise InputError(f"network file not found: {p}")
    nodes = []
    with open(nodes_csv, newline="") as f:
        reader = csv.DictReader(f)
        _require_columns(reader, ["node_id", "x_m", "y_m", "is_candidate"], nodes_csv)
        for row in reader:
            try:
                nodes.append(
                    Node(
                        node_id=int(row["node_id"]),
                        x_m=float(row["x_m"]),
                        y_m=float(row["y_m"]),
                        is_candidate=bool(int(row["is_candidate"])),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"{nodes_csv}: bad row {row}: {exc}") from exc
    edges = []
    with open(edges_csv, newline="") as f:
        reader = csv.DictReader(f)
        _require_columns(reader, ["u", "v", "length_m"], edges_csv)
        for row in reader:
            try:
                edges.append((int(row["u"]), int(row["v"]), float(row["length_m"])))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{edges_csv}: bad row {row}: {exc}") from exc
    return RoadNetwork(nodes, edges)


def save_network(net: RoadNetwork, nodes_csv: str | Path, edges_csv: str | Path) -> None:
    with open(nodes_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "x_m", "y_m", "is_candidate"])
        for n in net.nodes:
            w.writerow([n.node_id, f"{n.x_m:.3f}", f"{n.y_m:.3f}", int(n.is_candidate)])
    with open(edges_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["u", "v", "length_m"])
        for u, v, length in net.edges:
            w.writerow([u, v, f"{length:.3f}"])


def _require_columns(reader: csv.DictReader, needed: list[str], path: Path) -> None:
    have = reader.fieldnames or []
    missing = [c for c in needed if c not in have]
    if missing:
        raise InputError(f"{path}: missing columns {missing} (have {have})")
