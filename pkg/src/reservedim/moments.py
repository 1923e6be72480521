"""Per-interval moments of forecasts and scenario sets, plus %NRMSE.

Moments are mean, variance, skewness and excess kurtosis. Skewness and
kurtosis are flagged undefined wherever the variance is below
``DEGENERATE_VARIANCE`` (night-hour case for solar).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .forecast import IntervalCdf, ProbabilisticForecast, cdf_inverse, _frozen_array

# Variance below this (MW^2) makes skewness/kurtosis undefined.
DEGENERATE_VARIANCE = 1e-6


@dataclass(frozen=True, eq=False)
class MomentSeries:
    """Per-interval mean, variance, skewness and excess kurtosis.

    ``defined`` is False exactly where the variance is below the degeneracy
    tolerance; skewness and kurtosis hold NaN there.
    """

    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    kurtosis_excess: np.ndarray
    defined: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        n = mean.size
        for name in ("variance", "skewness", "kurtosis_excess", "defined"):
            if np.asarray(getattr(self, name)).size != n:
                raise InputError("moment series must share one length")
        variance = np.asarray(self.variance, dtype=float)
        if np.any(variance < 0.0):
            raise InputError("variance must be non-negative")
        object.__setattr__(self, "mean", _frozen_array(mean))
        object.__setattr__(self, "variance", _frozen_array(variance))
        object.__setattr__(self, "skewness", _frozen_array(self.skewness))
        object.__setattr__(self, "kurtosis_excess", _frozen_array(self.kurtosis_excess))
        object.__setattr__(self, "defined", _frozen_array(np.asarray(self.defined, dtype=bool), dtype=bool))

    def __len__(self) -> int:
        return self.mean.size


class RunningWeightedMoments:
    """One-pass weighted central moments up to fourth order.

    Incremental update of the weighted mean and the weighted central moment
    sums M2..M4, elementwise over an array shape. The update of a point equal
    to the running mean is an exact no-op, so constant inputs yield exactly
    zero variance, which the degeneracy flags rely on.
    """

    def __init__(self, shape):
        self.weight = 0.0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)
        self.m3 = np.zeros(shape)
        self.m4 = np.zeros(shape)

    def push(self, x: np.ndarray, w: float) -> None:
        if w < 0.0:
            raise InputError("weights must be non-negative")
        if w == 0.0:
            return
        w_old = self.weight
        w_new = w_old + w
        delta = np.asarray(x, dtype=float) - self.mean
        # higher orders first: they use the pre-update m2/m3
        self.m4 += (
            delta**4 * w_old * w * (w_old**2 - w_old * w + w**2) / w_new**3
            + 6.0 * delta**2 * w**2 * self.m2 / w_new**2
            - 4.0 * delta * w * self.m3 / w_new
        )
        self.m3 += (
            delta**3 * w_old * w * (w_old - w) / w_new**2
            - 3.0 * delta * w * self.m2 / w_new
        )
        self.m2 += delta**2 * w_old * w / w_new
        self.mean += delta * (w / w_new)
        self.weight = w_new

    def finalize(self) -> MomentSeries:
        if self.weight <= 0.0:
            raise InputError("no weight accumulated")
        variance = np.maximum(self.m2 / self.weight, 0.0)
        mu3 = self.m3 / self.weight
        mu4 = self.m4 / self.weight
        return _assemble(self.mean, variance, mu3, mu4)


def _assemble(mean, variance, mu3, mu4) -> MomentSeries:
    defined = variance >= DEGENERATE_VARIANCE
    skew = np.full(mean.shape, np.nan)
    kurt = np.full(mean.shape, np.nan)
    sigma2 = variance[defined]
    skew[defined] = mu3[defined] / sigma2**1.5
    kurt[defined] = mu4[defined] / sigma2**2 - 3.0
    return MomentSeries(mean=mean, variance=variance, skewness=skew,
                        kurtosis_excess=kurt, defined=defined)


def forecast_moments(forecast: ProbabilisticForecast, n_grid: int = 10_000) -> MomentSeries:
    """Moments of each interval's piecewise-linear CDF by quadrature.

    Evaluates the inverse CDF on a uniform midpoint grid of ``n_grid``
    probabilities and averages, which is exact for piecewise-linear inverse
    CDFs up to grid resolution. Degenerate intervals get the atom as mean,
    zero variance, and undefined shape moments.
    """
    if n_grid < 100:
        raise InputError("n_grid must be at least 100")
    grid = (np.arange(n_grid) + 0.5) / n_grid
    T = forecast.horizon
    mean = np.empty(T)
    variance = np.zeros(T)
    mu3 = np.zeros(T)
    mu4 = np.zeros(T)
    for t, cdf in enumerate(forecast.intervals):
        if cdf.is_degenerate:
            mean[t] = cdf.atom
            continue
        x = cdf_inverse(cdf, grid)
        mean[t] = x.mean()
        d = x - mean[t]
        variance[t] = np.mean(d**2)
        mu3[t] = np.mean(d**3)
        mu4[t] = np.mean(d**4)
    return _assemble(mean, variance, mu3, mu4)


def interval_moments(cdf: IntervalCdf, n_grid: int = 10_000) -> tuple[float, float]:
    """Mean and variance of a single interval CDF (same quadrature)."""
    if cdf.is_degenerate:
        return cdf.atom, 0.0
    grid = (np.arange(n_grid) + 0.5) / n_grid
    x = cdf_inverse(cdf, grid)
    m = float(x.mean())
    return m, float(np.mean((x - m) ** 2))


def scenario_moments(scenario_set) -> MomentSeries:
    """Probability-weighted moments of a scenario set, per interval."""
    pis = scenario_set.probabilities()
    if abs(pis.sum() - 1.0) > 1e-9:
        raise InputError("scenario probabilities must sum to 1 within 1e-9")
    acc = RunningWeightedMoments(scenario_set.horizon)
    for scenario in scenario_set.scenarios:
        acc.push(scenario.values, scenario.probability)
    return acc.finalize()


def nrmse(test, ref) -> float:
    """Percent RMSE of ``test`` against ``ref``, normalized by ref's range."""
    test = np.asarray(test, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if test.shape != ref.shape or test.ndim != 1 or test.size == 0:
        raise InputError("series must be non-empty and of equal length")
    span = float(ref.max() - ref.min())
    if span <= 0.0:
        raise InputError("degenerate reference: zero range")
    rmse = float(np.sqrt(np.mean((test - ref) ** 2)))
    return 100.0 * rmse / span
