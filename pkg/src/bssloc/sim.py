"""Discrete-event simulator: the ground-truth layout evaluator.

Vehicles arrive per demand as Poisson processes, draw a battery level, pick
a built reachable station by logit over utilities built from each station's
empirically observed mean wait, drive there, queue at a finite-capacity
single-server swap bay, and continue to their destination. A vehicle finding
the station full abandons swapping (Type I loss); a vehicle with no built
station within range and detour bound is lost immediately (Type II).

Loss statistics count only vehicles generated inside the measurement window
[warmup, horizon); vehicles still traveling or queued when the horizon hits
are in flight and treated as served for the loss ratio. Runs are exactly
reproducible for a fixed seed: the event queue breaks time ties by insertion
order.
"""

from __future__ import annotations

import configparser
import heapq
import math
import random
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analytic import EvalResult, SimCounts, StationLoad
from .demand import ChoiceParams, PathDemand
from .errors import InputError
from .network import AdmissibleSets, DistanceMatrix, RoadNetwork, admissible_sets

_EV_DEMAND = 0
_EV_STATION = 1
_EV_DONE = 2
_EV_DEST = 3

SIM_CONFIG_KEYS = [
    "warmup_s",
    "horizon_s",
    "speed_mps",
    "consumption_kwh_per_km",
    "d_max_km",
    "seed",
    "service_dist",
    "service_mean_s",
    "capacity",
    "battery_capacity_kwh",
]


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters, SI units internally."""

    warmup_s: float
    horizon_s: float
    speed_mps: float
    consumption_kwh_per_m: float
    d_max_m: float
    seed: int
    service_dist: str = "exponential"
    service_mean_s: float = 300.0
    capacity: int = 6
    battery_capacity_kwh: float = 100.0

    def __post_init__(self) -> None:
        if not self.horizon_s > self.warmup_s >= 0:
            raise InputError(
                f"need horizon_s > warmup_s >= 0, got {self.horizon_s}, {self.warmup_s}"
            )
        if not self.speed_mps > 0:
            raise InputError("speed must be positive")
        if not self.consumption_kwh_per_m > 0:
            raise InputError("consumption must be positive")
        if self.d_max_m < 0:
            raise InputError("d_max must be nonnegative")
        if self.service_dist not in ("exponential", "deterministic"):
            raise InputError(f"unknown service distribution {self.service_dist!r}")
        if not self.service_mean_s > 0:
            raise InputError("service mean must be positive")
        if self.capacity < 1:
            raise InputError("station capacity must be >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        """Parse the key-value simulation config file.

        Accepts a bare ``key = value`` file or one with a ``[simulation]``
        section header.
        """
        path = Path(path)
        if not path.exists():
            raise InputError(f"simulation config not found: {path}")
        text = path.read_text()
        if not text.lstrip().startswith("["):
            text = "[simulation]\n" + text
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise InputError(f"{path}: {exc}") from exc
        section = parser["simulation"] if parser.has_section("simulation") else parser[parser.sections()[0]]
        missing = [k for k in SIM_CONFIG_KEYS if k not in section]
        if missing:
            raise InputError(f"{path}: missing keys {missing}")
        try:
            return cls(
                warmup_s=section.getfloat("warmup_s"),
                horizon_s=section.getfloat("horizon_s"),
                speed_mps=section.getfloat("speed_mps"),
                consumption_kwh_per_m=section.getfloat("consumption_kwh_per_km") / 1000.0,
                d_max_m=section.getfloat("d_max_km") * 1000.0,
                seed=section.getint("seed"),
                service_dist=section.get("service_dist"),
                service_mean_s=section.getfloat("service_mean_s"),
                capacity=section.getint("capacity"),
                battery_capacity_kwh=section.getfloat("battery_capacity_kwh"),
            )
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc

    def to_file(self, path: str | Path) -> None:
        lines = ["[simulation]"]
        lines.append(f"warmup_s = {self.warmup_s!r}")
        lines.append(f"horizon_s = {self.horizon_s!r}")
        lines.append(f"speed_mps = {self.speed_mps!r}")
        lines.append(f"consumption_kwh_per_km = {self.consumption_kwh_per_m * 1000.0!r}")
        lines.append(f"d_max_km = {self.d_max_m / 1000.0!r}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"service_dist = {self.service_dist}")
        lines.append(f"service_mean_s = {self.service_mean_s!r}")
        lines.append(f"capacity = {self.capacity}")
        lines.append(f"battery_capacity_kwh = {self.battery_capacity_kwh!r}")
        Path(path).write_text("\n".join(lines) + "\n")


class _Station:
    """Mutable per-station queue state and wait statistics."""

    __slots__ = ("in_system", "busy", "queue", "wait_count", "wait_sum", "arrivals", "blocked")

    def __init__(self) -> None:
        self.in_system = 0
        self.busy = False
        self.queue: list = []  # (enqueue_time, counted, dist_to_dest_m)
        self.wait_count = 0
        self.wait_sum = 0.0
        self.arrivals = 0  # counted window only
        self.blocked = 0

    def mean_wait(self) -> float:
        if self.wait_count == 0:
            return 0.0
        return self.wait_sum / self.wait_count


def simulate(
    layout: Iterable[int],
    demands: list[PathDemand],
    net: RoadNetwork,
    dm: DistanceMatrix,
    choice: ChoiceParams,
    cfg: SimConfig,
    sets: AdmissibleSets | None = None,
) -> EvalResult:
    """Run one replication and return the realized demand-loss result."""
    layout = frozenset(layout)
    extra = layout - net.candidates
    if extra:
        raise InputError(f"layout contains non-candidate nodes {sorted(extra)}")
    if sets is None:
        levels = sorted({b for d in demands for b in d.battery_pmf})
        sets = admissible_sets(net, dm, demands, cfg.d_max_m, cfg.consumption_kwh_per_m, levels)

    rng = random.Random(cfg.seed)
    stations = {j: _Station() for j in sorted(layout)}

    # Per (demand, level): built reachable stations with the wait-free part of
    # their utility and the travel legs, so the hot loop only rescales waits.
    base_util = choice.alpha2 * choice.epsilon
    options: list[dict[float, list[tuple[int, float, float, float]]]] = []
    pmf_cum: list[list[tuple[float, float]]] = []
    for dem in demands:
        per_level = {}
        for b in dem.battery_pmf:
            built = sets.an_b[(dem.origin, dem.dest, b)] & layout
            opts = []
            for j in sorted(built):
                detour = dm.detour(dem.origin, j, dem.dest)
                opts.append(
                    (
                        j,
                        base_util - choice.alpha1_per_m * detour,
                        dm.dist(dem.origin, j),
                        dm.dist(j, dem.dest),
                    )
                )
            per_level[b] = opts
        options.append(per_level)
        acc, cum = 0.0, []
        for level in sorted(dem.battery_pmf):
            acc += dem.battery_pmf[level]
            cum.append((acc, level))
        pmf_cum.append(cum)

    horizon = cfg.horizon_s
    warmup = cfg.warmup_s
    exponential_service = cfg.service_dist == "exponential"
    mean_service = cfg.service_mean_s
    alpha3 = choice.alpha3_per_s
    speed = cfg.speed_mps
    capacity = cfg.capacity

    generated = served = type1 = type2 = in_flight = 0
    type2_by_od = {d.od: 0 for d in demands}
    trips_completed = 0

    events: list[tuple] = []
    seq = 0

    def push(time: float, kind: int, a=0, b=0.0, c=0.0) -> None:
        nonlocal seq
        heapq.heappush(events, (time, seq, kind, a, b, c))
        seq += 1

    def service_time() -> float:
        if exponential_service:
            return rng.expovariate(1.0 / mean_service)
        return mean_service

    for idx, dem in enumerate(demands):
        push(rng.expovariate(dem.rate_per_s), _EV_DEMAND, idx)

    while events:
        time, _, kind, a, b, c = heapq.heappop(events)
        if time >= horizon:
            break

        if kind == _EV_DEMAND:
            idx = a
            dem = demands[idx]
            push(time + rng.expovariate(dem.rate_per_s), _EV_DEMAND, idx)
            counted = time >= warmup
            if counted:
                generated += 1

            r = rng.random()
            cum = pmf_cum[idx]
            level = cum[-1][1]
            for acc, lv in cum:
                if r < acc:
                    level = lv
                    break

            opts = options[idx][level]
            if not opts:
                if counted:
                    type2 += 1
                    type2_by_od[dem.od] += 1
                continue
            if counted:
                in_flight += 1
            if len(opts) == 1:
                j, _, d_to_station, d_to_dest = opts[0]
            else:
                utils = [u - alpha3 * stations[j].mean_wait() for j, u, _, _ in opts]
                top = max(utils)
                weights = [math.exp(u - top) for u in utils]
                pick = rng.random() * sum(weights)
                k = 0
                acc_w = weights[0]
                while acc_w < pick and k < len(weights) - 1:
                    k += 1
                    acc_w += weights[k]
                j, _, d_to_station, d_to_dest = opts[k]
            push(time + d_to_station / speed, _EV_STATION, j, counted, d_to_dest)

        elif kind == _EV_STATION:
            j, counted, d_to_dest = a, b, c
            st = stations[j]
            if counted:
                st.arrivals += 1
            if st.in_system >= capacity:
                if counted:
                    type1 += 1
                    st.blocked += 1
                    in_flight -= 1
                continue
            st.in_system += 1
            if st.busy:
                st.queue.append((time, counted, d_to_dest))
            else:
                st.busy = True
                st.wait_count += 1  # zero wait still updates the estimate
                push(time + service_time(), _EV_DONE, j, counted, d_to_dest)

        elif kind == _EV_DONE:
            j, counted, d_to_dest = a, b, c
            st = stations[j]
            st.in_system -= 1
            if counted:
                served += 1
                in_flight -= 1
            push(time + d_to_dest / speed, _EV_DEST, 0, counted)
            if st.queue:
                enq_time, next_counted, next_dest = st.queue.pop(0)
                st.wait_count += 1
                st.wait_sum += time - enq_time
                push(time + service_time(), _EV_DONE, j, next_counted, next_dest)
            else:
                st.busy = False

        else:  # _EV_DEST
            trips_completed += 1

    if generated != served + type1 + type2 + in_flight:
        raise RuntimeError(
            "conservation violated: "
            f"{generated} != {served} + {type1} + {type2} + {in_flight}"
        )

    window = horizon - warmup
    mu = 1.0 / mean_service
    per_station = {
        j: StationLoad(
            st.arrivals / window,
            (st.arrivals / window) / mu,
            st.blocked / window,
        )
        for j, st in stations.items()
    }
    eta = (type1 + type2) / generated if generated > 0 else 0.0
    return EvalResult(
        eta_lost=eta,
        type1_rate=type1 / window,
        type2_rate=type2 / window,
        total_rate=generated / window,
        per_station=per_station,
        per_demand_type2={od: n / window for od, n in type2_by_od.items()},
        counts=SimCounts(generated, served, type1, type2, in_flight),
    )


@dataclass
class ReplicationResult:
    mean_eta: float
    std_eta: float
    results: list[EvalResult]


def replicate(
    layout: Iterable[int],
    demands: list[PathDemand],
    net: RoadNetwork,
    dm: DistanceMatrix,
    choice: ChoiceParams,
    cfg: SimConfig,
    n_reps: int,
    seeds: Sequence[int] | None = None,
    sets: AdmissibleSets | None = None,
) -> ReplicationResult:
    """Independent replications with distinct seeds; per-rep results kept
    so paired (common-random-number) comparisons remain possible."""
    if n_reps < 1:
        raise InputError(f"n_reps must be >= 1, got {n_reps}")
    if seeds is None:
        seeds = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(n_reps)]
    elif len(seeds) != n_reps:
        raise InputError(f"need {n_reps} seeds, got {len(seeds)}")
    if sets is None:
        levels = sorted({b for d in demands for b in d.battery_pmf})
        sets = admissible_sets(net, dm, demands, cfg.d_max_m, cfg.consumption_kwh_per_m, levels)
    results = [
        simulate(layout, demands, net, dm, choice, replace(cfg, seed=s), sets=sets)
        for s in seeds
    ]
    etas = [r.eta_lost for r in results]
    std = statistics.stdev(etas) if n_reps > 1 else 0.0
    return ReplicationResult(statistics.fmean(etas), std, results)


class SimEvaluator:
    """Simulation-backed evaluator with precomputed admissible sets.

    Plain data throughout, so instances pickle cleanly for process pools.
    """

    def __init__(
        self,
        demands: list[PathDemand],
        net: RoadNetwork,
        dm: DistanceMatrix,
        choice: ChoiceParams,
        cfg: SimConfig,
        n_stations: int | None = None,
    ):
        self.demands = demands
        self.net = net
        self.dm = dm
        self.choice = choice
        self.cfg = cfg
        self.n_stations = n_stations
        levels = sorted({b for d in demands for b in d.battery_pmf})
        self.sets = admissible_sets(
            net, dm, demands, cfg.d_max_m, cfg.consumption_kwh_per_m, levels
        )
        self.candidates = net.candidates

    def validate_layout(self, layout: frozenset[int]) -> None:
        extra = layout - self.candidates
        if extra:
            raise InputError(f"layout contains non-candidate nodes {sorted(extra)}")
        if self.n_stations is not None and len(layout) != self.n_stations:
            raise InputError(
                f"layout must contain exactly {self.n_stations} stations "
                f"(station-count constraint), got {len(layout)}"
            )

    def evaluate(self, layout: Iterable[int], seed: int | None = None) -> EvalResult:
        layout = frozenset(layout)
        self.validate_layout(layout)
        cfg = self.cfg if seed is None else replace(self.cfg, seed=seed)
        return simulate(layout, self.demands, self.net, self.dm, self.choice, cfg, sets=self.sets)

    def eta(self, layout: Iterable[int], seed: int | None = None) -> float:
        return self.evaluate(layout, seed).eta_lost
