"""Noise-free Gaussian-process regression with a squared-exponential kernel.

Inputs are expected on a normalized scale (the optimizer maps node
coordinates into the unit square); outputs are standardized internally
before fitting and de-standardized on query. Hyperparameters are chosen by
maximizing the log marginal likelihood over a log-space grid followed by
coordinate descent, which is derivative-free and exactly reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError

SIGMA_F2_BOUNDS = (1e-2, 1e2)
ELL_BOUNDS = (5e-2, 2.0)
GRID_SIZE = 7
COORD_DESCENT_STEPS = 50
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def kernel(x: np.ndarray, x2: np.ndarray, sigma_f2: float, ell: float) -> float:
    """Squared-exponential covariance between two points."""
    d2 = float(np.sum((np.asarray(x, float) - np.asarray(x2, float)) ** 2))
    return sigma_f2 * math.exp(-d2 / (2.0 * ell * ell))


def _kernel_matrix(xa: np.ndarray, xb: np.ndarray, sigma_f2: float, ell: float) -> np.ndarray:
    d2 = np.sum((xa[:, None, :] - xb[None, :, :]) ** 2, axis=-1)
    return sigma_f2 * np.exp(-d2 / (2.0 * ell * ell))


@dataclass
class GPModel:
    """Fitted GP: training data, hyperparameters, and cached factorization."""

    x: np.ndarray  # (n, d) normalized inputs
    y: np.ndarray  # (n,) standardized outputs
    sigma_f2: float
    length_scale: float
    jitter: float
    factor: np.ndarray  # lower-triangular Cholesky factor of K + jitter*I
    alpha: np.ndarray  # (K + jitter*I)^{-1} y
    y_mean: float
    y_scale: float
    log_likelihood: float

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class Posterior:
    mu: float
    var: float


def _chol_with_jitter(k_matrix: np.ndarray) -> tuple[np.ndarray, float]:
    for jitter in JITTER_LADDER:
        try:
            factor = np.linalg.cholesky(k_matrix + jitter * np.eye(k_matrix.shape[0]))
            return factor, jitter
        except np.linalg.LinAlgError:
            continue
    cond = float(np.linalg.cond(k_matrix))
    raise FitError(
        f"covariance not positive definite after jitter up to {JITTER_LADDER[-1]:g} "
        f"(n={k_matrix.shape[0]}, cond={cond:.3e})"
    )


def _log_likelihood(x: np.ndarray, y: np.ndarray, sigma_f2: float, ell: float) -> float | None:
    k_matrix = _kernel_matrix(x, x, sigma_f2, ell)
    try:
        factor, _ = _chol_with_jitter(k_matrix)
    except FitError:
        return None
    solved = np.linalg.solve(factor, y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    n = len(y)
    return float(-0.5 * solved @ solved - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi))


def fit(x: np.ndarray, y: np.ndarray) -> GPModel:
    """Fit hyperparameters by maximum marginal likelihood.

    Duplicate inputs are dropped (first occurrence wins) since the noise-free
    covariance is singular otherwise. Constant outputs are legal: the signal
    variance then lands on its lower bound and the posterior mean reproduces
    the constant everywhere.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} inputs vs {y.shape[0]} outputs")
    if x.shape[0] < 1:
        raise ValueError("need at least one observation")

    seen: dict[tuple, int] = {}
    keep = []
    for i in range(x.shape[0]):
        key = tuple(x[i])
        if key not in seen:
            seen[key] = i
            keep.append(i)
    x, y = x[keep], y[keep]

    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if y_scale < 1e-12:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale

    lo, hi = SIGMA_F2_BOUNDS
    s2_grid = np.exp(np.linspace(math.log(lo), math.log(hi), GRID_SIZE))
    ell_grid = np.exp(np.linspace(math.log(ELL_BOUNDS[0]), math.log(ELL_BOUNDS[1]), GRID_SIZE))

    best: tuple[float, float, float] | None = None  # (loglik, s2, ell)
    for s2 in s2_grid:
        for ell in ell_grid:
            ll = _log_likelihood(x, ys, float(s2), float(ell))
            if ll is not None and (best is None or ll > best[0]):
                best = (ll, float(s2), float(ell))
    if best is None:
        raise FitError("no positive-definite covariance on the hyperparameter grid")

    ll_best, s2, ell = best
    step = 1.5
    for _ in range(COORD_DESCENT_STEPS):
        improved = False
        for cand in (
            (s2 * step, ell),
            (s2 / step, ell),
            (s2, ell * step),
            (s2, ell / step),
        ):
            c_s2 = min(max(cand[0], 1e-4), 1e4)
            c_ell = min(max(cand[1], 1e-3), 10.0)
            ll = _log_likelihood(x, ys, c_s2, c_ell)
            if ll is not None and ll > ll_best + 1e-12:
                ll_best, s2, ell = ll, c_s2, c_ell
                improved = True
                break
        if not improved:
            step = math.sqrt(step)
            if step < 1.02:
                break

    k_matrix = _kernel_matrix(x, x, s2, ell)
    factor, jitter = _chol_with_jitter(k_matrix)
    alpha = np.linalg.solve(factor.T, np.linalg.solve(factor, ys))
    return GPModel(
        x=x,
        y=ys,
        sigma_f2=s2,
        length_scale=ell,
        jitter=jitter,
        factor=factor,
        alpha=alpha,
        y_mean=y_mean,
        y_scale=y_scale,
        log_likelihood=ll_best,
    )


def posterior(model: GPModel, xstar: np.ndarray) -> Posterior:
    """Posterior mean and variance at one point, in original output units."""
    mu, var = posterior_many(model, np.atleast_2d(np.asarray(xstar, float)))
    return Posterior(float(mu[0]), float(var[0]))


def posterior_many(model: GPModel, xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior over rows of ``xstar``."""
    xstar = np.atleast_2d(np.asarray(xstar, float))
    k_star = _kernel_matrix(model.x, xstar, model.sigma_f2, model.length_scale)  # (n, m)
    mu_std = k_star.T @ model.alpha
    v = np.linalg.solve(model.factor, k_star)  # (n, m)
    var_std = model.sigma_f2 - np.sum(v * v, axis=0)
    var_std = np.maximum(var_std, 0.0)
    mu = model.y_mean + model.y_scale * mu_std
    var = (model.y_scale**2) * var_std
    return mu, var


def dump_observations(model: GPModel, path) -> None:
    """Debug dump of training data and hyperparameters as CSV."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sigma_f2", model.sigma_f2])
        w.writerow(["length_scale", model.length_scale])
        w.writerow(["jitter", model.jitter])
        w.writerow(["y_mean", model.y_mean])
        w.writerow(["y_scale", model.y_scale])
        w.writerow([f"x{k}" for k in range(model.x.shape[1])] + ["y_standardized"])
        for row, yv in zip(model.x, model.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yv))])
