"""Layout optimizers: LNS with BO-driven repair, simulated annealing, and
exhaustive enumeration.

All three consume a pluggable evaluator (closed-form or simulation). Layout
evaluations are seeded by hashing the run seed with the layout, so revisits
of a layout return identical values and different optimizers compare layouts
under common random numbers. Evaluation budgets are hard: an optimizer
never issues more evaluator calls than configured, and runs that are bounded
only by the budget consume it exactly.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .bo import BoTraceRow, boens, estimate_lipschitz
from .errors import BudgetExhausted, InputError
from .network import RoadNetwork

logger = logging.getLogger(__name__)

Layout = frozenset[int]


def layout_seed(run_seed: int, layout: Iterable[int]) -> int:
    """Stable 63-bit seed for evaluating one layout within one run."""
    h = hashlib.sha256()
    h.update(str(int(run_seed)).encode())
    for j in sorted(layout):
        h.update(b",")
        h.update(str(int(j)).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


class BudgetedObjective:
    """Counts evaluator calls, enforces the budget, and tracks the best layout.

    ``pool_map`` (an executor's ``map``, if any) runs batch evaluations
    concurrently; bookkeeping stays in this process. Failed evaluations are
    dropped, logged, and not counted against the budget.
    """

    def __init__(
        self,
        evaluator,
        run_seed: int,
        max_evals: int | None,
        pool_map: Callable | None = None,
        layout_size: int | None = None,
    ):
        if max_evals is not None and max_evals < 1:
            raise InputError(f"evaluation budget must be >= 1, got {max_evals}")
        self.evaluator = evaluator
        self.run_seed = int(run_seed)
        self.max_evals = max_evals
        self.pool_map = pool_map
        self.layout_size = layout_size
        self.calls = 0
        self.best_value = math.inf
        self.best_layout: Layout | None = None

    @property
    def remaining(self) -> int:
        if self.max_evals is None:
            return 2**62
        return self.max_evals - self.calls

    def _record(self, layout: Layout, value: float) -> None:
        # repair steps evaluate partial completions; only full layouts
        # qualify as the run's best
        if self.layout_size is not None and len(layout) != self.layout_size:
            return
        if value < self.best_value:
            self.best_value = value
            self.best_layout = layout

    def __call__(self, layout: Iterable[int]) -> float:
        layout = frozenset(layout)
        if self.remaining <= 0:
            raise BudgetExhausted(f"evaluation budget of {self.max_evals} used up")
        self.calls += 1
        value = self.evaluator.eta(layout, seed=layout_seed(self.run_seed, layout))
        self._record(layout, value)
        return value

    def map_layouts(self, layouts: Sequence[Iterable[int]]) -> list:
        """Evaluate up to ``remaining`` layouts; may return a shorter list.

        Entries are floats or None (failed evaluation).
        """
        layouts = [frozenset(l) for l in layouts]
        if not layouts:
            return []
        if self.remaining <= 0:
            raise BudgetExhausted(f"evaluation budget of {self.max_evals} used up")
        take = layouts[: self.remaining]
        results: list = []
        if self.pool_map is not None and len(take) > 1:
            seeds = [layout_seed(self.run_seed, l) for l in take]
            raw = list(self.pool_map(_eval_layout_task, [(self.evaluator, l, s) for l, s in zip(take, seeds)]))
        else:
            raw = []
            for l in take:
                try:
                    raw.append(self.evaluator.eta(l, seed=layout_seed(self.run_seed, l)))
                except Exception as exc:
                    logger.warning("evaluation failed for layout %s: %s", sorted(l), exc)
                    raw.append(None)
        for l, value in zip(take, raw):
            if value is None:
                continue
            self.calls += 1
            self._record(l, float(value))
        results = [None if v is None else float(v) for v in raw]
        return results


def _eval_layout_task(args):
    evaluator, layout, seed = args
    try:
        return evaluator.eta(layout, seed=seed)
    except Exception as exc:  # surfaced as a dropped point in the parent
        logger.warning("evaluation failed for layout %s: %s", sorted(layout), exc)
        return None


@dataclass
class TraceRow:
    elapsed_s: float
    evals: int
    incumbent_obj: float
    best_obj: float
    layout: tuple[int, ...]


@dataclass
class OptTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, elapsed_s, evals, incumbent_obj, best_obj, layout) -> None:
        self.rows.append(
            TraceRow(elapsed_s, evals, incumbent_obj, best_obj, tuple(sorted(layout)))
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["elapsed_s", "evals", "incumbent_obj", "best_obj", "layout"])
            for r in self.rows:
                w.writerow(
                    [
                        f"{r.elapsed_s:.3f}",
                        r.evals,
                        repr(r.incumbent_obj),
                        repr(r.best_obj),
                        ";".join(str(j) for j in r.layout),
                    ]
                )

    @classmethod
    def read_csv(cls, path: str | Path) -> "OptTrace":
        trace = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                trace.rows.append(
                    TraceRow(
                        float(row["elapsed_s"]),
                        int(row["evals"]),
                        float(row["incumbent_obj"]),
                        float(row["best_obj"]),
                        tuple(int(j) for j in row["layout"].split(";") if j),
                    )
                )
        return trace


@dataclass
class OptResult:
    best_layout: Layout
    best_obj: float
    trace: OptTrace
    evals: int


@dataclass(frozen=True)
class LnsConfig:
    """LNS-BO knobs: destruction size, repair sampling, and stopping rules."""

    k_destroy: int
    n_init: int
    m_batch: int
    n_sample: int
    seed: int
    max_evals: int | None = None
    max_outer_iters: int | None = None
    time_budget_s: float | None = None

    def __post_init__(self) -> None:
        if self.k_destroy < 1:
            raise InputError("k_destroy must be >= 1")
        if self.n_init < 1:
            raise InputError("n_init must be >= 1")
        if self.m_batch < 1:
            raise InputError("m_batch must be >= 1")
        if self.n_sample < 0:
            raise InputError("n_sample must be >= 0")
        if self.max_evals is None and self.max_outer_iters is None and self.time_budget_s is None:
            raise InputError("need a stopping rule: max_evals, max_outer_iters, or time_budget_s")


@dataclass(frozen=True)
class SaConfig:
    """Simulated-annealing knobs.

    ``t_init`` of None calibrates the initial temperature from the mean
    absolute objective change of 20 random probe moves (which consume
    evaluation budget).
    """

    seed: int
    t_init: float | None = None
    cooling_ratio: float = 0.95
    moves_per_temp: int = 1
    max_evals: int | None = None
    time_budget_s: float | None = None
    n_probes: int = 20

    def __post_init__(self) -> None:
        if self.t_init is not None and not self.t_init > 0:
            raise InputError("t_init must be positive")
        if not 0.0 < self.cooling_ratio < 1.0:
            raise InputError("cooling_ratio must lie in (0, 1)")
        if self.moves_per_temp < 1:
            raise InputError("moves_per_temp must be >= 1")
        if self.max_evals is None and self.time_budget_s is None:
            raise InputError("need a stopping rule: max_evals or time_budget_s")


def destroy(layout: Layout, k: int, rng: random.Random) -> Layout:
    """Remove k uniformly chosen stations from the layout."""
    if k > len(layout):
        raise InputError(f"cannot remove {k} stations from a layout of {len(layout)}")
    removed = rng.sample(sorted(layout), k)
    return frozenset(layout) - frozenset(removed)


def normalized_coords(net: RoadNetwork) -> dict[int, np.ndarray]:
    """Node coordinates mapped into the unit square by the network bbox."""
    x_min, y_min, x_max, y_max = net.bounding_box()
    dx = (x_max - x_min) or 1.0
    dy = (y_max - y_min) or 1.0
    return {
        n.node_id: np.array([(n.x_m - x_min) / dx, (n.y_m - y_min) / dy])
        for n in net.nodes
    }


def repair(
    partial: Layout,
    candidates: frozenset[int],
    n_missing: int,
    objective: BudgetedObjective,
    coords: dict[int, np.ndarray],
    cfg: LnsConfig,
    rng: random.Random,
    bo_trace: list[BoTraceRow] | None = None,
) -> tuple[Layout, float]:
    """Re-insert ``n_missing`` stations one at a time.

    Each insertion seeds a random initial design over the free candidates,
    refines it with batch BO, and fixes the best node found. The value
    returned is the objective of the final insertion's best completion,
    which equals the full repaired layout's objective.
    """
    current = frozenset(partial)
    obj = math.inf
    for _ in range(n_missing):
        free = sorted(candidates - current)
        if not free:
            raise InputError("no free candidates left to repair with")
        n0 = min(cfg.n_init, len(free))
        init_nodes = rng.sample(free, n0)
        init_values = objective.map_layouts([current | {j} for j in init_nodes])

        nodes, values = [], []
        for j, v in zip(init_nodes, init_values):
            if v is not None:
                nodes.append(j)
                values.append(v)
        if not nodes:
            raise BudgetExhausted("no evaluations possible during repair")

        if len(init_values) == len(init_nodes) and cfg.n_sample > 0:
            cand_coords = {j: coords[j] for j in free}
            nodes, values = boens(
                nodes,
                values,
                cand_coords,
                cfg.n_sample,
                cfg.m_batch,
                lambda batch: objective.map_layouts([current | {j} for j in batch]),
                trace=bo_trace,
            )
        k_best = min(range(len(values)), key=lambda i: values[i])
        obj = values[k_best]
        current = current | {nodes[k_best]}
    return current, obj


def lns_bo(
    initial: Iterable[int],
    evaluator,
    cfg: LnsConfig,
    net: RoadNetwork | None = None,
    pool_map: Callable | None = None,
    trace: OptTrace | None = None,
) -> OptResult:
    """Large neighborhood search with BO-driven repair.

    Acceptance is strictly greedy: a repaired solution replaces the
    incumbent only when it improves on it; the best solution is tracked
    separately.
    """
    initial = frozenset(initial)
    if cfg.k_destroy > len(initial):
        raise InputError("k_destroy exceeds layout size")
    coords = (
        normalized_coords(net)
        if net is not None
        else _coords_from_evaluator(evaluator)
    )
    candidates = frozenset(evaluator.candidates)
    rng = random.Random(cfg.seed)
    objective = BudgetedObjective(
        evaluator, cfg.seed, cfg.max_evals, pool_map=pool_map, layout_size=len(initial)
    )
    if trace is None:
        trace = OptTrace()
    t0 = time.monotonic()

    incumbent = initial
    last_obj = objective(initial)
    best_layout, best_obj = initial, last_obj
    trace.append(0.0, objective.calls, last_obj, best_obj, incumbent)

    outer = 0
    try:
        while True:
            if cfg.max_outer_iters is not None and outer >= cfg.max_outer_iters:
                break
            if cfg.time_budget_s is not None and time.monotonic() - t0 > cfg.time_budget_s:
                break
            if objective.remaining <= 0:
                break
            outer += 1
            partial = destroy(incumbent, cfg.k_destroy, rng)
            repaired, obj = repair(
                partial, candidates, cfg.k_destroy, objective, coords, cfg, rng
            )
            if obj < last_obj:
                incumbent, last_obj = repaired, obj
            if obj < best_obj:
                best_layout, best_obj = repaired, obj
            trace.append(
                time.monotonic() - t0, objective.calls, last_obj, best_obj, incumbent
            )
    except BudgetExhausted:
        pass

    if objective.best_layout is not None and objective.best_value < best_obj:
        best_layout, best_obj = objective.best_layout, objective.best_value
        trace.append(time.monotonic() - t0, objective.calls, last_obj, best_obj, best_layout)
    return OptResult(best_layout, best_obj, trace, objective.calls)


def _coords_from_evaluator(evaluator) -> dict[int, np.ndarray]:
    net = getattr(evaluator, "net", None)
    if net is None:
        raise InputError("lns_bo needs the road network for candidate coordinates")
    return normalized_coords(net)


def metropolis_accept(delta: float, temperature: float, rng: random.Random) -> bool:
    """Accept improving moves always, worsening ones with exp(-delta/T)."""
    if delta <= 0:
        return True
    if temperature <= 0:
        return False
    return rng.random() < math.exp(-delta / temperature)


def simulated_annealing(
    initial: Iterable[int],
    evaluator,
    cfg: SaConfig,
    pool_map: Callable | None = None,
    trace: OptTrace | None = None,
) -> OptResult:
    """Baseline: move one station to a free candidate, Metropolis acceptance,
    geometric cooling."""
    initial = frozenset(initial)
    candidates = frozenset(evaluator.candidates)
    rng = random.Random(cfg.seed)
    objective = BudgetedObjective(
        evaluator, cfg.seed, cfg.max_evals, pool_map=pool_map, layout_size=len(initial)
    )
    if trace is None:
        trace = OptTrace()
    t0 = time.monotonic()

    current = initial
    current_obj = objective(initial)
    best_layout, best_obj = current, current_obj
    trace.append(0.0, objective.calls, current_obj, best_obj, current)

    def propose(layout: Layout) -> Layout:
        out = rng.choice(sorted(layout))
        free = sorted(candidates - layout)
        if not free:
            return layout
        return (layout - {out}) | {rng.choice(free)}

    try:
        temperature = cfg.t_init
        if temperature is None:
            deltas = []
            for _ in range(cfg.n_probes):
                if cfg.time_budget_s is not None and time.monotonic() - t0 > cfg.time_budget_s:
                    break
                probe = propose(current)
                if probe == current:
                    continue
                deltas.append(abs(objective(probe) - current_obj))
            temperature = max(sum(deltas) / len(deltas), 1e-12) if deltas else 1.0
            logger.info("calibrated t_init = %.6g from %d probes", temperature, len(deltas))

        moves_at_temp = 0
        while True:
            if cfg.time_budget_s is not None and time.monotonic() - t0 > cfg.time_budget_s:
                break
            if objective.remaining <= 0:
                break
            neighbor = propose(current)
            if neighbor == current:
                break  # no free candidates: nothing to explore
            obj = objective(neighbor)
            if metropolis_accept(obj - current_obj, temperature, rng):
                current, current_obj = neighbor, obj
            if obj < best_obj:
                best_layout, best_obj = neighbor, obj
            trace.append(
                time.monotonic() - t0, objective.calls, current_obj, best_obj, current
            )
            moves_at_temp += 1
            if moves_at_temp >= cfg.moves_per_temp:
                temperature *= cfg.cooling_ratio
                moves_at_temp = 0
    except BudgetExhausted:
        pass

    if objective.best_layout is not None and objective.best_value < best_obj:
        best_layout, best_obj = objective.best_layout, objective.best_value
        trace.append(time.monotonic() - t0, objective.calls, current_obj, best_obj, best_layout)
    return OptResult(best_layout, best_obj, trace, objective.calls)


def enumerate_exact(
    candidates: Iterable[int],
    n_stations: int,
    evaluator,
    run_seed: int = 0,
    cap: int = 100_000,
    pool_map: Callable | None = None,
    trace: OptTrace | None = None,
) -> OptResult:
    """Evaluate every layout of ``n_stations`` candidates; global optimum
    under the supplied evaluator. Ties go to the lexicographically smallest
    layout (combinations are generated in that order and only strict
    improvements replace the incumbent)."""
    cands = sorted(set(candidates))
    if n_stations > len(cands):
        raise InputError(f"cannot place {n_stations} stations on {len(cands)} candidates")
    count = math.comb(len(cands), n_stations)
    if count > cap:
        raise InputError(
            f"enumeration refused: C({len(cands)}, {n_stations}) = {count} exceeds cap {cap}"
        )
    objective = BudgetedObjective(evaluator, run_seed, None, pool_map=pool_map)
    if trace is None:
        trace = OptTrace()
    t0 = time.monotonic()
    best_layout: Layout | None = None
    best_obj = math.inf
    layouts = [frozenset(c) for c in itertools.combinations(cands, n_stations)]
    if pool_map is not None:
        values = objective.map_layouts(layouts)
        for layout, obj in zip(layouts, values):
            if obj is None:
                continue
            if obj < best_obj:
                best_layout, best_obj = layout, obj
            trace.append(time.monotonic() - t0, objective.calls, obj, best_obj, layout)
    else:
        for layout in layouts:
            obj = objective(layout)
            if obj < best_obj:
                best_layout, best_obj = layout, obj
            trace.append(time.monotonic() - t0, objective.calls, obj, best_obj, layout)
    if best_layout is None:
        raise InputError("no feasible layout evaluated")
    return OptResult(best_layout, best_obj, trace, objective.calls)


def load_layout(path: str | Path) -> Layout:
    """Layout file: one node id per line."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"layout file not found: {path}")
    ids = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            ids.append(int(line))
        except ValueError as exc:
            raise InputError(f"{path}: bad node id {line!r}") from exc
    if not ids:
        raise InputError(f"{path}: empty layout")
    return frozenset(ids)


def save_layout(layout: Iterable[int], path: str | Path) -> None:
    Path(path).write_text("".join(f"{j}\n" for j in sorted(layout)))
