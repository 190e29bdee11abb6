"""Exact Gaussian process regression with a rational-quadratic covariance.

Fitting follows the standard Cholesky route: factor ``K + noise2 * I``,
solve for the weight vector, and reuse both for any number of test inputs.
Hyperparameters are chosen by exhaustive grid search over the summed log
marginal likelihood of a training set of series.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import NumericalError
from .preprocess import Standardization, WarpParams, standardize, unstandardize_mean_var, warp_map

LOG_2PI = math.log(2 * math.pi)
JITTER = (0.0, 1e-10, 1e-8, 1e-6)
NEGATIVE_VARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class RqHyperparams:
    amplitude2: float
    alpha: float
    tau: float
    noise2: float

    def __post_init__(self):
        for name in ("amplitude2", "alpha", "tau", "noise2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and > 0, got {v}")

    def as_tuple(self):
        return (self.amplitude2, self.alpha, self.tau, self.noise2)


@dataclass(frozen=True)
class GridSpec:
    amplitude2: tuple = (0.25, 0.5, 1.0, 2.0)
    tau: tuple = tuple(float(v) for v in np.geomspace(0.1, 30.0, 7))
    alpha: tuple = (0.5, 1.0, 2.0, 5.0)
    noise2: tuple = (0.01, 0.05, 0.1, 0.25)

    def __post_init__(self):
        for name in ("amplitude2", "tau", "alpha", "noise2"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def points(self) -> list[RqHyperparams]:
        """Grid points in fixed order: amplitude2 slowest, noise2 fastest."""
        return [
            RqHyperparams(amplitude2=a, alpha=al, tau=t, noise2=s)
            for a, t, al, s in itertools.product(self.amplitude2, self.tau, self.alpha, self.noise2)
        ]

    def __len__(self):
        return len(self.amplitude2) * len(self.tau) * len(self.alpha) * len(self.noise2)


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray
    L: np.ndarray
    weights: np.ndarray
    hyper: RqHyperparams
    standardization: Standardization = field(default_factory=lambda: Standardization(0.0, 1.0))
    jitter: float = 0.0


@dataclass(frozen=True, eq=False)
class InterpolatedSeries:
    hadm_id: int
    label: int
    grid_times: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __len__(self):
        return len(self.grid_times)


def rq_kernel(t, t_prime, h: RqHyperparams):
    """``amplitude2 * (1 + r**2 / (2 alpha tau**2)) ** -alpha`` with broadcasting."""
    r2 = (np.asarray(t, dtype=np.float64) - np.asarray(t_prime, dtype=np.float64)) ** 2
    return h.amplitude2 * (1.0 + r2 / (2.0 * h.alpha * h.tau**2)) ** (-h.alpha)


def fit(X, y, h: RqHyperparams, name: str = "series", standardization=None) -> GpModel:
    X = np.asarray(X, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.size == 0 or X.size != y.size:
        raise ValueError(f"{name}: need equal, non-zero numbers of inputs and targets")
    if np.any(np.diff(X) <= 0):
        raise ValueError(f"{name}: training inputs must be strictly ascending (no duplicates)")
    K = rq_kernel(X[:, None], X[None, :], h)
    eye = np.eye(X.size)
    for jitter in JITTER:
        try:
            L = np.linalg.cholesky(K + (h.noise2 + jitter * h.amplitude2) * eye)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NumericalError(f"{name}: Cholesky failed at {h} even with jitter {JITTER[-1]:g}")
    weights = solve_triangular(L.T, solve_triangular(L, y, lower=True), lower=False)
    return GpModel(
        X=X, L=L, weights=weights, hyper=h,
        standardization=standardization or Standardization(0.0, 1.0),
        jitter=jitter * h.amplitude2,
    )


def predict(m: GpModel, x_star):
    """Posterior mean and variance (standardized units) at each test input."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
    k_star = rq_kernel(m.X[:, None], x_star[None, :], m.hyper)
    means = k_star.T @ m.weights
    v = solve_triangular(m.L, k_star, lower=True)
    variances = m.hyper.amplitude2 - np.einsum("ij,ij->j", v, v)
    if np.any(variances < -NEGATIVE_VARIANCE_TOL):
        raise NumericalError(f"negative predictive variance {variances.min():.3g}")
    return means, np.maximum(variances, 0.0)


def log_marginal_likelihood(m: GpModel, y) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    return float(-0.5 * y @ m.weights - np.log(np.diag(m.L)).sum() - 0.5 * n * LOG_2PI)


def _pack(train):
    ts, ys, offsets = [], [], [0]
    for X, y in train:
        X = np.asarray(X, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.size == 0 or X.size != y.size:
            raise ValueError("each series needs equal, non-zero numbers of inputs and targets")
        ts.append(X)
        ys.append(y)
        offsets.append(offsets[-1] + X.size)
    return (np.ascontiguousarray(np.concatenate(ts)), np.ascontiguousarray(np.concatenate(ys)),
            np.asarray(offsets, dtype=np.int64))


def grid_objective(train, grid: GridSpec, threads: int = 1) -> np.ndarray:
    """Summed log marginal likelihood at every grid point (NaN where any series fails).

    Each grid point sums its series in input order, so the result does not
    depend on how the grid is split across threads.
    """
    if not train:
        raise ValueError("grid search needs at least one series")
    t, y, offsets = _pack(train)
    rows = np.ascontiguousarray([p.as_tuple() for p in grid.points()], dtype=np.float64)
    if threads <= 1 or len(rows) < 2 * threads:
        return kernels.rq_lml_grid(t, y, offsets, rows)
    chunks = np.array_split(np.arange(len(rows)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(
            lambda idx: kernels.rq_lml_grid(t, y, offsets, np.ascontiguousarray(rows[idx])), chunks)
        return np.concatenate(list(parts))


def grid_search(train, grid: GridSpec = GridSpec(), threads: int = 1):
    """Grid point maximizing the summed log marginal likelihood over ``train``.

    ``train`` is a sequence of ``(X, y)`` pairs of warped times and
    standardized values. Ties go to the earliest grid point. Returns the
    winning hyperparameters and their objective value.
    """
    if len(grid) == 0:
        raise ValueError("empty hyperparameter grid")
    objective = grid_objective(train, grid, threads)
    if np.all(np.isnan(objective)):
        raise NumericalError("every grid point failed numerically")
    best = int(np.nanargmax(objective))
    return grid.points()[best], float(objective[best])


def regular_grid(span: float, interval_days: float, pad_samples: int) -> np.ndarray:
    """Regular grid from ``-pad * interval`` to ``span + pad * interval`` on the real axis."""
    if not interval_days > 0:
        raise ValueError("interval_days must be > 0")
    if pad_samples < 0:
        raise ValueError("pad_samples must be >= 0")
    n_inner = int(math.floor(span / interval_days + 1e-9)) + 1
    k = np.arange(n_inner + 2 * pad_samples, dtype=np.float64)
    return (k - pad_samples) * interval_days


def prepare_series(times, values, warp: WarpParams):
    """Warped times, standardized values and the standardization constants."""
    warped = warp_map(times, times, warp)
    y, s = standardize(values)
    return warped, y, s


def interpolate(series, h: RqHyperparams, warp: WarpParams = WarpParams(),
                interval_days: float = 0.25, pad_samples: int = 10) -> InterpolatedSeries:
    """Resample one series on a padded regular grid of real days.

    The grid lives on the original time axis; it is warped with the same map
    as the samples before prediction. Means and variances are returned in
    the series' original units.
    """
    times = np.asarray(series.times, dtype=np.float64)
    grid = regular_grid(times[-1] - times[0], interval_days, pad_samples) + times[0]
    warped, y, s = prepare_series(times, series.values, warp)
    model = fit(warped, y, h, name=f"hadm {series.hadm_id}", standardization=s)
    mu, var = predict(model, warp_map(times, grid, warp))
    mu, var = unstandardize_mean_var(mu, var, s)
    return InterpolatedSeries(series.hadm_id, series.label, grid, mu, var)
