"""Closed-form demand-loss objective.

Given a layout, demands split over built admissible stations by the logit
choice model; each station is a single-server finite-capacity (M/M/1/K)
queue whose blocking probability yields the Type I loss, while demands with
no built reachable station are lost outright (Type II). The objective is the
long-run fraction of total demand lost.

The station wait entering the choice utility is an exogenous per-station
input here. An optional fixed-point mode instead iterates it to the queue's
own predicted mean wait, for use when no empirical estimate exists.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .demand import ChoiceParams, PathDemand, choice_probabilities, utility
from .errors import InputError
from .network import AdmissibleSets, DistanceMatrix

Layout = frozenset[int]

RHO_ONE_TOL = 1e-9


@dataclass(frozen=True)
class StationParams:
    """Queue parameters of one station: service rate, capacity, assumed wait."""

    mu_per_s: float
    ll: int
    l_wait_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.mu_per_s > 0:
            raise InputError(f"service rate must be positive, got {self.mu_per_s}")
        if self.ll < 1:
            raise InputError(f"capacity must be >= 1, got {self.ll}")
        if self.l_wait_s < 0:
            raise InputError(f"assumed wait must be nonnegative, got {self.l_wait_s}")


class StationLoad(NamedTuple):
    lambda_per_s: float
    rho: float
    lambda_lost_per_s: float


@dataclass
class SimCounts:
    """Demand bookkeeping of one simulation run (counted window only)."""

    generated: int
    served: int
    type1: int
    type2: int
    in_flight: int


@dataclass
class EvalResult:
    """Demand-loss evaluation: overall fraction plus its decomposition."""

    eta_lost: float
    type1_rate: float
    type2_rate: float
    total_rate: float
    per_station: dict[int, StationLoad]
    per_demand_type2: dict[tuple[int, int], float]
    counts: SimCounts | None = None


def mm1k_loss_prob(rho: float, ll: int) -> float:
    """Blocking probability of a single-server queue holding at most ll customers.

    rho^ll * (1 - rho) / (1 - rho^(ll+1)), continuous at rho = 1 where the
    ratio degenerates to the uniform-stationary-distribution limit 1/(ll+1).
    """
    if rho < 0:
        raise InputError(f"traffic intensity must be nonnegative, got {rho}")
    if ll < 1:
        raise InputError(f"capacity must be >= 1, got {ll}")
    if abs(rho - 1.0) < RHO_ONE_TOL:
        return 1.0 / (ll + 1)
    if rho > 1.0 and (ll + 1) * math.log(rho) > 700.0:
        # rho^ll overflows; the ratio tends to (rho - 1) / rho from below
        return (rho - 1.0) / rho
    num = rho**ll * (1.0 - rho)
    den = 1.0 - rho ** (ll + 1)
    return num / den


def mm1k_stationary(rho: float, ll: int) -> list[float]:
    """Stationary distribution over 0..ll customers in system."""
    if abs(rho - 1.0) < RHO_ONE_TOL:
        return [1.0 / (ll + 1)] * (ll + 1)
    weights = [rho**n for n in range(ll + 1)]
    z = sum(weights)
    return [w / z for w in weights]


def mm1k_mean_wait_s(lam_per_s: float, mu_per_s: float, ll: int) -> float:
    """Expected wait before service, seconds, for admitted customers."""
    if lam_per_s <= 0:
        return 0.0
    rho = lam_per_s / mu_per_s
    pn = mm1k_stationary(rho, ll)
    mean_in_system = sum(n * p for n, p in enumerate(pn))
    queue_len = mean_in_system - (1.0 - pn[0])
    admitted = lam_per_s * (1.0 - pn[ll])
    if admitted <= 0:
        return 0.0
    return queue_len / admitted


def station_arrival_rates(
    layout: Layout,
    demands: Iterable[PathDemand],
    sets: AdmissibleSets,
    dm: DistanceMatrix,
    choice: ChoiceParams,
    l_wait_by_station: Mapping[int, float],
) -> dict[int, float]:
    """Per-station arrival rate induced by the logit split of every demand."""
    rates = {j: 0.0 for j in layout}
    for dem in demands:
        for b, p_b in dem.battery_pmf.items():
            if p_b == 0.0:
                continue
            built = sets.an_b[(dem.origin, dem.dest, b)] & layout
            if not built:
                continue
            utils = {
                j: utility(dem, j, dm, l_wait_by_station[j], choice) for j in built
            }
            for j, prob in choice_probabilities(utils).items():
                rates[j] += dem.rate_per_s * p_b * prob
    return rates


def type2_loss(
    layout: Layout, demands: Iterable[PathDemand], sets: AdmissibleSets
) -> tuple[dict[tuple[int, int], float], float]:
    """Loss rate of demands with no built station reachable at their level."""
    per_demand: dict[tuple[int, int], float] = {}
    total = 0.0
    for dem in demands:
        lost = 0.0
        for b, p_b in dem.battery_pmf.items():
            if not (sets.an_b[(dem.origin, dem.dest, b)] & layout):
                lost += dem.rate_per_s * p_b
        per_demand[dem.od] = lost
        total += lost
    return per_demand, total


def evaluate(
    layout: Iterable[int],
    demands: list[PathDemand],
    sets: AdmissibleSets,
    dm: DistanceMatrix,
    choice: ChoiceParams,
    station_params: Mapping[int, StationParams],
    fixed_point: bool = False,
    fixed_point_tol_s: float = 1e-6,
    fixed_point_max_iter: int = 100,
) -> EvalResult:
    """Closed-form loss fraction of a layout.

    With ``fixed_point`` the per-station wait is iterated to the queue's own
    predicted mean wait instead of using the exogenous ``l_wait_s`` values
    (which then only seed the iteration).
    """
    layout = frozenset(layout)
    for j in layout:
        if j not in station_params:
            raise InputError(f"no station parameters for node {j}")
    total_rate = sum(d.rate_per_s for d in demands)
    if total_rate <= 0:
        raise InputError("total demand rate is zero")

    l_wait = {j: station_params[j].l_wait_s for j in layout}
    rates = station_arrival_rates(layout, demands, sets, dm, choice, l_wait)
    if fixed_point:
        for _ in range(fixed_point_max_iter):
            new_wait = {
                j: mm1k_mean_wait_s(rates[j], station_params[j].mu_per_s, station_params[j].ll)
                for j in layout
            }
            delta = max((abs(new_wait[j] - l_wait[j]) for j in layout), default=0.0)
            l_wait = new_wait
            rates = station_arrival_rates(layout, demands, sets, dm, choice, l_wait)
            if delta < fixed_point_tol_s:
                break

    per_station: dict[int, StationLoad] = {}
    type1 = 0.0
    for j in sorted(layout):
        sp = station_params[j]
        rho = rates[j] / sp.mu_per_s
        lost = rates[j] * mm1k_loss_prob(rho, sp.ll)
        per_station[j] = StationLoad(rates[j], rho, lost)
        type1 += lost

    per_demand, type2 = type2_loss(layout, demands, sets)
    eta = (type1 + type2) / total_rate
    return EvalResult(
        eta_lost=eta,
        type1_rate=type1,
        type2_rate=type2,
        total_rate=total_rate,
        per_station=per_station,
        per_demand_type2=per_demand,
    )


class AnalyticEvaluator:
    """Reusable closed-form evaluator bound to one problem instance.

    Deterministic, so the ``seed`` argument of :meth:`evaluate` is accepted
    for interface parity with the simulator and ignored.
    """

    def __init__(
        self,
        demands: list[PathDemand],
        sets: AdmissibleSets,
        dm: DistanceMatrix,
        choice: ChoiceParams,
        station_params: Mapping[int, StationParams],
        candidates: frozenset[int],
        n_stations: int | None = None,
        fixed_point: bool = False,
        net=None,
    ):
        self.demands = demands
        self.sets = sets
        self.dm = dm
        self.choice = choice
        self.station_params = dict(station_params)
        self.candidates = frozenset(candidates)
        self.n_stations = n_stations
        self.fixed_point = fixed_point
        self.net = net  # only needed when an optimizer wants coordinates

    def validate_layout(self, layout: Layout) -> None:
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
        return evaluate(
            layout,
            self.demands,
            self.sets,
            self.dm,
            self.choice,
            self.station_params,
            fixed_point=self.fixed_point,
        )

    def eta(self, layout: Iterable[int], seed: int | None = None) -> float:
        return self.evaluate(layout, seed).eta_lost


def load_station_params(path: str | Path) -> dict[int, StationParams]:
    """Read the station parameter CSV: ``node_id,mu_per_hour,ll,l_wait_seconds``."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"station parameter file not found: {path}")
    params = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        needed = ["node_id", "mu_per_hour", "ll", "l_wait_seconds"]
        have = reader.fieldnames or []
        if any(c not in have for c in needed):
            raise InputError(f"{path}: expected columns {needed}, have {have}")
        for row in reader:
            try:
                params[int(row["node_id"])] = StationParams(
                    mu_per_s=float(row["mu_per_hour"]) / 3600.0,
                    ll=int(row["ll"]),
                    l_wait_s=float(row["l_wait_seconds"]),
                )
            except InputError:
                raise
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}: bad row {row}: {exc}") from exc
    if not params:
        raise InputError(f"{path}: no station parameters")
    return params


def write_per_station_csv(result: EvalResult, path: str | Path) -> None:
    """One row per station plus a totals row."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "lambda_per_s", "rho", "lambda_lost_per_s"])
        for j in sorted(result.per_station):
            load = result.per_station[j]
            w.writerow([j, repr(load.lambda_per_s), repr(load.rho), repr(load.lambda_lost_per_s)])
        w.writerow(
            [
                "total",
                repr(sum(l.lambda_per_s for l in result.per_station.values())),
                "",
                repr(result.type1_rate),
            ]
        )


def write_summary_csv(result: EvalResult, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        w.writerow(["eta_lost", repr(result.eta_lost)])
        w.writerow(["type1_rate_per_s", repr(result.type1_rate)])
        w.writerow(["type2_rate_per_s", repr(result.type2_rate)])
        w.writerow(["total_rate_per_s", repr(result.total_rate)])
        if result.counts is not None:
            c = result.counts
            w.writerow(["generated", c.generated])
            w.writerow(["served", c.served])
            w.writerow(["type1", c.type1])
            w.writerow(["type2", c.type2])
            w.writerow(["in_flight", c.in_flight])
