"""Path demands and the station-choice model.

A path demand is an origin-destination pair generating battery-swap requests
as a Poisson process; each arriving vehicle carries a battery level drawn
from the demand's probability mass function. Drivers pick a station by a
multinomial logit over a deterministic utility that penalizes detour distance
and expected queue wait.

All quantities are SI internally: meters, seconds, kWh. Helper constructors
convert the mixed km/hour units that station-network configs are commonly
written in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import InputError
from .network import DistanceMatrix

PMF_TOL = 1e-9


@dataclass
class PathDemand:
    """Poisson demand between two nodes with a battery-level distribution."""

    origin: int
    dest: int
    rate_per_s: float
    battery_pmf: dict[float, float]

    def __post_init__(self) -> None:
        if self.origin == self.dest:
            raise InputError(f"demand origin equals destination ({self.origin})")
        if not self.rate_per_s > 0:
            raise InputError(f"demand ({self.origin},{self.dest}) rate must be positive")
        if not self.battery_pmf:
            raise InputError(f"demand ({self.origin},{self.dest}) has empty battery pmf")
        total = 0.0
        for level, p in self.battery_pmf.items():
            if p < 0:
                raise InputError(f"negative probability for level {level}")
            total += p
        if abs(total - 1.0) > PMF_TOL:
            raise InputError(
                f"battery pmf of ({self.origin},{self.dest}) sums to {total!r}, not 1"
            )

    @property
    def od(self) -> tuple[int, int]:
        return (self.origin, self.dest)

    def levels(self) -> tuple[float, ...]:
        return tuple(sorted(self.battery_pmf))


@dataclass(frozen=True)
class ChoiceParams:
    """Sensitivities of the station-choice utility, in SI units.

    utility(j) = -alpha1 * detour_m + alpha2 * epsilon - alpha3 * wait_s

    alpha2 * epsilon is a constant shift shared by all stations, so it never
    changes choice probabilities; it is kept for fidelity to the utility
    definition.
    """

    alpha1_per_m: float
    alpha2: float
    alpha3_per_s: float
    epsilon: float

    def __post_init__(self) -> None:
        for name in ("alpha1_per_m", "alpha2", "alpha3_per_s"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InputError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @classmethod
    def from_km_hour_units(
        cls, alpha1_per_km: float, alpha2: float, alpha3_per_hour: float, epsilon: float
    ) -> "ChoiceParams":
        """Convert coefficients quoted per km of detour and per hour of wait."""
        return cls(
            alpha1_per_m=alpha1_per_km / 1000.0,
            alpha2=alpha2,
            alpha3_per_s=alpha3_per_hour / 3600.0,
            epsilon=epsilon,
        )


def utility(
    od: PathDemand, station: int, dm: DistanceMatrix, l_wait_s: float, params: ChoiceParams
) -> float:
    """Deterministic utility of swapping at ``station`` for this demand.

    The caller is responsible for only asking about admissible stations;
    detour is nonnegative by the shortest-path triangle inequality.
    """
    detour = dm.detour(od.origin, station, od.dest)
    return -params.alpha1_per_m * detour + params.alpha2 * params.epsilon - params.alpha3_per_s * l_wait_s


def choice_probabilities(utilities: Mapping[int, float]) -> dict[int, float]:
    """Multinomial logit over the given utilities.

    Keys are the built stations admissible for the (demand, battery level)
    at hand; everything else implicitly has probability 0. An empty mapping
    returns an empty dict: the demand has nowhere to go and is lost.
    """
    if not utilities:
        return {}
    items = sorted(utilities.items())
    top = max(pi for _, pi in items)
    weights = [(j, math.exp(pi - top)) for j, pi in items]
    z = sum(w for _, w in weights)
    return {j: w / z for j, w in weights}


def sample_battery(od: PathDemand, rng) -> float:
    """Draw a battery level from the demand's pmf.

    ``rng`` needs only a ``random()`` method, so both ``random.Random`` and
    ``numpy.random.Generator`` streams work. Deterministic given the stream
    state; levels are walked in sorted order.
    """
    r = rng.random()
    acc = 0.0
    levels = sorted(od.battery_pmf)
    for level in levels:
        acc += od.battery_pmf[level]
        if r < acc:
            return level
    return levels[-1]


def load_demands(path: str | Path) -> list[PathDemand]:
    """Read the demand CSV: ``origin,dest,rate_per_hour,battery_pmf``.

    The pmf column is ``level:prob`` pairs joined by ``;``, e.g.
    ``40:0.5;80:0.5``.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"demand file not found: {path}")
    demands = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        needed = ["origin", "dest", "rate_per_hour", "battery_pmf"]
        have = reader.fieldnames or []
        if any(c not in have for c in needed):
            raise InputError(f"{path}: expected columns {needed}, have {have}")
        for row in reader:
            try:
                pmf = parse_pmf(row["battery_pmf"])
                demands.append(
                    PathDemand(
                        origin=int(row["origin"]),
                        dest=int(row["dest"]),
                        rate_per_s=float(row["rate_per_hour"]) / 3600.0,
                        battery_pmf=pmf,
                    )
                )
            except InputError:
                raise
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}: bad row {row}: {exc}") from exc
    if not demands:
        raise InputError(f"{path}: no demands")
    return demands


def save_demands(demands: list[PathDemand], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["origin", "dest", "rate_per_hour", "battery_pmf"])
        for d in demands:
            w.writerow([d.origin, d.dest, repr(d.rate_per_s * 3600.0), format_pmf(d.battery_pmf)])


def parse_pmf(text: str) -> dict[float, float]:
    pmf = {}
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        level_s, _, prob_s = chunk.partition(":")
        pmf[float(level_s)] = float(prob_s)
    return pmf


def format_pmf(pmf: Mapping[float, float]) -> str:
    return ";".join(f"{level:g}:{p!r}" for level, p in sorted(pmf.items()))


def uniform_grid_pmf(low_kwh: float, high_kwh: float, step_kwh: float) -> dict[float, float]:
    """Equal-mass pmf on the grid {low, low+step, ...} strictly below high.

    Stands in for a continuous uniform battery-level distribution when a
    finite level set is required, e.g. uniform(5, 100) kWh becomes the
    19 levels {5, 10, ..., 95}.
    """
    levels = []
    x = low_kwh
    while x < high_kwh - 1e-12:
        levels.append(round(x, 9))
        x += step_kwh
    if not levels:
        raise InputError("empty battery grid")
    p = 1.0 / len(levels)
    return {level: p for level in levels}
