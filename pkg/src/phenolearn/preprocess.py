"""Time warping and per-series standardization applied before GP regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WarpParams:
    """Gap warp ``d -> d**(1/a) + b``. ``a`` is dimensionless, ``b`` in days."""

    a: float = 3.0
    b: float = 0.0

    def __post_init__(self):
        if not self.a >= 1:
            raise ValueError(f"warp exponent a must be >= 1, got {self.a}")
        if not self.b >= 0:
            raise ValueError(f"warp offset b must be >= 0, got {self.b}")

    @property
    def is_identity(self):
        # short-circuited so the identity warp is exact rather than a cumsum of diffs
        return self.a == 1 and self.b == 0


@dataclass(frozen=True)
class Standardization:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"standardization std must be > 0, got {self.std}")


def _check_ascending(times):
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly ascending")
    return times


def warp_times(times, params: WarpParams = WarpParams()) -> np.ndarray:
    """Warp every inter-sample gap of an ascending series starting at 0.

    Long gaps shrink and short gaps stretch (for ``a > 1``), which makes a
    series sampled more often where it moves faster closer to stationary.
    """
    times = _check_ascending(times)
    if times[0] != 0:
        raise ValueError(f"times must start at 0, got {times[0]}")
    if params.is_identity:
        return times.copy()
    gaps = np.diff(times) ** (1.0 / params.a) + params.b
    return np.concatenate(([0.0], np.cumsum(gaps)))


def warp_map(times, query, params: WarpParams = WarpParams()) -> np.ndarray:
    """Map arbitrary times onto the warped axis defined by a sample series.

    The sample times land exactly on ``warp_times(times)``. Between samples
    the map is linear; outside the span each side warps the distance to the
    nearest endpoint as a gap (without the offset ``b``), so padding on the
    real axis stays monotone and continuous on the warped one.
    """
    times = _check_ascending(times)
    query = np.asarray(query, dtype=np.float64)
    if params.is_identity:
        return query - times[0]
    knots = warp_times(times - times[0], params)
    out = np.interp(query, times, knots)
    inv_a = 1.0 / params.a
    before = query < times[0]
    after = query > times[-1]
    out[before] = knots[0] - (times[0] - query[before]) ** inv_a
    out[after] = knots[-1] + (query[after] - times[-1]) ** inv_a
    return out


def standardize(values) -> tuple[np.ndarray, Standardization]:
    """Shift and scale to mean 0 and population standard deviation 1.

    An all-equal series keeps ``std = 1`` so the transform is a pure shift.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot standardize an empty series")
    if np.ptp(values) == 0:
        # the rounded mean of equal values can miss them by an ulp
        return np.zeros_like(values), Standardization(float(values[0]), 1.0)
    mean = float(values.mean())
    std = float(values.std())
    if not std > 0 or not np.isfinite(std):
        std = 1.0
    return (values - mean) / std, Standardization(mean, std)


def unstandardize(values, s: Standardization) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * s.std + s.mean


def unstandardize_mean_var(means, variances, s: Standardization):
    """Return predictive means and variances in the series' original units."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if np.any(variances < 0):
        raise ValueError("variances must be non-negative")
    return means * s.std + s.mean, variances * s.std**2
