"""Acquisition machinery for the station-insertion subproblem.

Expected improvement is evaluated from its defining expectation
E[(f* - f(x))+] under the Gaussian posterior. Some texts print a closed
form with Phi(delta/sigma) where Phi(-|delta|/sigma) belongs; that variant
disagrees with the expectation except at delta = 0, so the expectation form
is used throughout here.

Batches are chosen by maximization-penalization: after each pick, a local
penalizer centered on the picked point multiplies the acquisition so the
next pick lands elsewhere, with no GP refit inside the batch. The penalizer
radius scales with an estimated Lipschitz constant of the objective.

The search domain is the finite set of free candidate nodes, so acquisition
maximization is exhaustive scoring rather than numerical optimization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.stats import norm

from . import gp as gpmod
from .gp import GPModel

logger = logging.getLogger(__name__)

LIPSCHITZ_FLOOR = 1e-6
SIGMA_FLOOR = 1e-12


def expected_improvement(mu, sigma, f_star):
    """E[(f_star - N(mu, sigma^2))+], elementwise over array inputs.

    At sigma = 0 the improvement is certain: max(f_star - mu, 0).
    """
    mu = np.asarray(mu, float)
    sigma = np.asarray(sigma, float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    delta = f_star - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, delta / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = np.where(
        sigma > 0,
        delta * norm.cdf(z) + sigma * norm.pdf(z),
        np.maximum(delta, 0.0),
    )
    if ei.ndim == 0:
        return float(ei)
    return ei


def softplus_positive(z):
    """G(z): identity on positive values, soft-plus ln(1 + e^z) elsewhere.

    Keeps the penalized acquisition strictly positive without moving the
    maximizer when the acquisition is already positive.
    """
    z = np.asarray(z, float)
    out = np.where(z > 0, z, np.log1p(np.exp(np.minimum(z, 0.0))))
    if out.ndim == 0:
        return float(out)
    return out


def estimate_lipschitz(x: np.ndarray, y: np.ndarray) -> float:
    """Max observed |dy| / |dx| over point pairs, floored away from zero."""
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float).ravel()
    best = 0.0
    for i in range(len(y)):
        d = np.linalg.norm(x[i + 1 :] - x[i], axis=1)
        dy = np.abs(y[i + 1 :] - y[i])
        ok = d > 1e-12
        if np.any(ok):
            best = max(best, float(np.max(dy[ok] / d[ok])))
    return max(best, LIPSCHITZ_FLOOR)


def local_penalizer(
    x: np.ndarray, center: np.ndarray, mu_c: float, sigma_c: float, f_star: float, lipschitz: float
) -> float:
    """Soft exclusion factor of a pending batch point, in (0, 1].

    Small near the center (within the ball the Lipschitz bound says the
    center's value controls) and approaching 1 far away.
    """
    dist = float(np.linalg.norm(np.asarray(x, float) - np.asarray(center, float)))
    radius_gap = lipschitz * dist - abs(f_star - mu_c)
    return float(norm.cdf(radius_gap / (math.sqrt(2.0) * max(sigma_c, SIGMA_FLOOR))))


@dataclass
class AcquisitionState:
    """Everything batch selection needs between picks of one batch."""

    model: GPModel
    f_star: float
    evaluated: set[int]
    batch_so_far: list[tuple[int, np.ndarray, float, float]] = field(default_factory=list)
    lipschitz_est: float = LIPSCHITZ_FLOOR

    def add_batch_point(self, node: int, coords: np.ndarray) -> None:
        mu, var = gpmod.posterior_many(self.model, coords[None, :])
        self.batch_so_far.append((node, coords, float(mu[0]), math.sqrt(float(var[0]))))


def penalized_acquisition(x: np.ndarray, state: AcquisitionState) -> float:
    """G(EI(x)) shrunk by the penalizers of already-picked batch points."""
    x = np.asarray(x, float)
    mu, var = gpmod.posterior_many(state.model, x[None, :])
    value = softplus_positive(
        expected_improvement(float(mu[0]), math.sqrt(float(var[0])), state.f_star)
    )
    for _, center, mu_c, sigma_c in state.batch_so_far:
        value *= local_penalizer(x, center, mu_c, sigma_c, state.f_star, state.lipschitz_est)
    return float(value)


@dataclass
class BatchPick:
    node: int
    ei: float
    penalized: float


def select_batch(
    state: AcquisitionState, candidates: Mapping[int, np.ndarray], m: int
) -> list[BatchPick]:
    """Pick m distinct unevaluated candidates by maximization-penalization.

    One GP posterior sweep serves the whole batch; only the penalizers
    change between picks. Returns fewer than m picks (with a logged
    shortfall) when the candidate pool runs dry.
    """
    free = sorted(j for j in candidates if j not in state.evaluated)
    if not free:
        logger.warning("select_batch: no unevaluated candidates remain")
        return []
    coords = np.array([candidates[j] for j in free])
    mu, var = gpmod.posterior_many(state.model, coords)
    sigma = np.sqrt(var)
    ei = np.asarray(expected_improvement(mu, sigma, state.f_star), float)
    base = np.asarray(softplus_positive(ei), float)

    picks: list[BatchPick] = []
    taken: set[int] = set()
    penalty = np.ones(len(free))
    for _ in range(min(m, len(free))):
        scores = np.where([j in taken for j in free], -np.inf, base * penalty)
        k = int(np.argmax(scores))
        node = free[k]
        picks.append(BatchPick(node, float(ei[k]), float(scores[k])))
        taken.add(node)
        state.add_batch_point(node, coords[k])
        _, center, mu_c, sigma_c = state.batch_so_far[-1]
        gap = state.lipschitz_est * np.linalg.norm(coords - center, axis=1) - abs(
            state.f_star - mu_c
        )
        penalty *= norm.cdf(gap / (math.sqrt(2.0) * max(sigma_c, SIGMA_FLOOR)))
    if len(picks) < m:
        logger.warning("select_batch: wanted %d points, only %d available", m, len(picks))
    return picks


@dataclass
class BoTraceRow:
    iteration: int
    batch_index: int
    node_id: int
    objective: float
    ei: float
    penalized_value: float


def write_bo_trace(rows: Iterable[BoTraceRow], path) -> None:
    """Per-iteration refinement trace CSV."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "batch_index", "node_id", "objective", "ei", "penalized_value"])
        for r in rows:
            w.writerow(
                [r.iteration, r.batch_index, r.node_id, repr(r.objective), repr(r.ei), repr(r.penalized_value)]
            )


def boens(
    observed_nodes: list[int],
    observed_values: list[float],
    candidates: Mapping[int, np.ndarray],
    n_sample: int,
    m: int,
    evaluate_batch: Callable[[list[int]], list],
    lipschitz: float | Callable[[np.ndarray, np.ndarray], float] | None = None,
    trace: list[BoTraceRow] | None = None,
) -> tuple[list[int], list[float]]:
    """Batch-BO refinement of the single-station placement subproblem.

    Starting from seed observations, runs ``n_sample`` rounds of: fit GP,
    pick a batch of ``m`` unevaluated candidate nodes, evaluate them.
    Returns the augmented observation lists; the caller takes the argmin.

    ``evaluate_batch`` maps a list of candidate nodes to their objective
    values. Entries of None mark failed evaluations (dropped and logged by
    the callable); a shorter list than requested signals an exhausted
    evaluation budget, which ends the refinement early.
    """
    if not observed_nodes:
        raise ValueError("boens needs at least one seed observation")
    nodes = list(observed_nodes)
    values = list(observed_values)

    for it in range(n_sample):
        coords = np.array([candidates[j] for j in nodes])
        model = gpmod.fit(coords, np.array(values))
        if callable(lipschitz):
            lip = float(lipschitz(coords, np.array(values)))
        elif lipschitz is not None:
            lip = float(lipschitz)
        else:
            lip = estimate_lipschitz(coords, np.array(values))
        state = AcquisitionState(
            model=model,
            f_star=min(values),
            evaluated=set(nodes),
            lipschitz_est=lip,
        )
        picks = select_batch(state, candidates, m)
        if not picks:
            break

        results = evaluate_batch([p.node for p in picks])
        for batch_index, (p, val) in enumerate(zip(picks, results)):
            if val is None:
                continue
            nodes.append(p.node)
            values.append(float(val))
            if trace is not None:
                trace.append(
                    BoTraceRow(it, batch_index, p.node, float(val), p.ei, p.penalized)
                )
        if len(results) < len(picks):
            break
    return nodes, values
