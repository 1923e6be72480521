"""Reserve-determination methods over scenarios and forecast envelopes.

Recursive methods (all-scenarios, extreme-scenarios) run each scenario
through the dynamic-reserve lookup and take probability-weighted
expectations. Anticipative methods (bounds, prediction-interval) read the
requirement off the forecast envelope. The hybrid takes the elementwise
maximum of any set of results.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .forecast import PRODUCTION_KINDS, ProbabilisticForecast, TimeSeries, cdf_inverse
from .reserves import ReserveModel, ReserveProfile, explanatory_series, reserve_requirements
from .scenarios import ScenarioSet

logger = logging.getLogger(__name__)

METHOD_IDS = ("deterministic", "all-scenarios", "extreme-scenarios", "bounds",
              "prediction-interval", "hybrid", "risk-based")


@dataclass(frozen=True, eq=False)
class MethodResult:
    """A reserve profile plus the method identity and input provenance."""

    method: str
    profile: ReserveProfile
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHOD_IDS:
            raise InputError(f"unknown method id {self.method!r}")
        object.__setattr__(self, "provenance", dict(self.provenance))


class _RunningMean:
    """Incremental weighted mean over arrays.

    Dividing by the running weight normalizes the weights implicitly, and a
    push of a value equal to the current mean is an exact no-op. Both
    properties keep the method identities (subset = full set, scenarios =
    central) bit-exact.
    """

    def __init__(self, shape):
        self.weight = 0.0
        self.mean = np.zeros(shape)

    def push(self, x: np.ndarray, w: float) -> None:
        if w < 0.0:
            raise InputError("weights must be non-negative")
        if w == 0.0:
            return
        self.weight += w
        self.mean += (w / self.weight) * (x - self.mean)

    def finalize(self) -> np.ndarray:
        if self.weight <= 0.0:
            raise InputError("no weight accumulated")
        return self.mean


def _scenario_nu(model: ReserveModel, sset: ScenarioSet, values: np.ndarray) -> np.ndarray:
    return explanatory_series(model.explanatory_kind, values, sset.start,
                              sset.resolution_minutes)


def method_deterministic(model: ReserveModel, series: TimeSeries, ci: float) -> MethodResult:
    """Baseline: dynamic requirements of the central (deterministic) forecast."""
    nu = explanatory_series(model.explanatory_kind, series.values, series.start,
                            series.resolution_minutes)
    profile = reserve_requirements(model, nu, ci, start=series.start,
                                   resolution_minutes=series.resolution_minutes)
    profile = ReserveProfile(r_up=profile.r_up, r_dn=profile.r_dn,
                             method="deterministic", params={"ci": ci},
                             start=series.start,
                             resolution_minutes=series.resolution_minutes)
    return MethodResult(method="deterministic", profile=profile,
                        provenance={"kind": series.kind, "ci": ci})


def method_all_scenarios(sset: ScenarioSet, model: ReserveModel, ci: float) -> MethodResult:
    """Probability-weighted expected requirements over the whole set."""
    up = _RunningMean(sset.horizon)
    dn = _RunningMean(sset.horizon)
    for scenario in sset.scenarios:
        nu = _scenario_nu(model, sset, scenario.values)
        r = reserve_requirements(model, nu, ci)
        up.push(r.r_up, scenario.probability)
        dn.push(r.r_dn, scenario.probability)
    profile = ReserveProfile(r_up=up.finalize(), r_dn=dn.finalize(),
                             method="all-scenarios", params={"ci": ci},
                             start=sset.start,
                             resolution_minutes=sset.resolution_minutes)
    return MethodResult(method="all-scenarios", profile=profile,
                        provenance={"source": sset.source_id, "count": len(sset),
                                    "seed": sset.seed, "ci": ci})


@dataclass(frozen=True, eq=False)
class ExtremeSubsets:
    """The d most extreme scenarios per direction, by explanatory score."""

    source: ScenarioSet
    up_indices: tuple[int, ...]
    down_indices: tuple[int, ...]
    d: int
    scores: np.ndarray

    def up_scenarios(self):
        return [self.source.scenarios[i] for i in self.up_indices]

    def down_scenarios(self):
        return [self.source.scenarios[i] for i in self.down_indices]


def select_extremes(sset: ScenarioSet, d: int, score_kind: str = "magnitude") -> ExtremeSubsets:
    """Score scenarios by the horizon sum of an explanatory variable.

    For production variables the lowest-scoring scenarios form the upward
    subset (low production needs upward reserve) and the highest the
    downward one; load and net demand flip that mapping. Ties break toward
    the lower scenario index. Subsets are kept in scenario-index order.
    """
    if not (1 <= d <= len(sset)):
        raise InputError(f"d must lie in [1, {len(sset)}]")
    scores = np.array([
        explanatory_series(score_kind, s.values, sset.start, sset.resolution_minutes).sum()
        for s in sset.scenarios
    ])
    ascending = np.argsort(scores, kind="stable")
    descending = np.argsort(-scores, kind="stable")
    lowest = tuple(sorted(int(i) for i in ascending[:d]))
    highest = tuple(sorted(int(i) for i in descending[:d]))
    if sset.kind in PRODUCTION_KINDS:
        up_idx, down_idx = lowest, highest
    else:
        up_idx, down_idx = highest, lowest
    return ExtremeSubsets(source=sset, up_indices=up_idx, down_indices=down_idx,
                          d=d, scores=scores)


def extreme_count(total: int, fraction: float) -> int:
    """Subset size from a fraction of S, rounded up, at least 1."""
    if not (0.0 < fraction <= 1.0):
        raise InputError("extreme fraction must lie in (0, 1]")
    return max(1, min(total, math.ceil(fraction * total)))


def method_extreme_scenarios(subsets: ExtremeSubsets, model: ReserveModel,
                             ci: float) -> MethodResult:
    """Expected requirements over the extreme subsets, re-normalized."""
    sset = subsets.source
    up = _RunningMean(sset.horizon)
    for i in subsets.up_indices:
        scenario = sset.scenarios[i]
        nu = _scenario_nu(model, sset, scenario.values)
        up.push(reserve_requirements(model, nu, ci).r_up, scenario.probability)
    dn = _RunningMean(sset.horizon)
    for i in subsets.down_indices:
        scenario = sset.scenarios[i]
        nu = _scenario_nu(model, sset, scenario.values)
        dn.push(reserve_requirements(model, nu, ci).r_dn, scenario.probability)
    profile = ReserveProfile(r_up=up.finalize(), r_dn=dn.finalize(),
                             method="extreme-scenarios",
                             params={"ci": ci, "d": subsets.d},
                             start=sset.start,
                             resolution_minutes=sset.resolution_minutes)
    return MethodResult(method="extreme-scenarios", profile=profile,
                        provenance={"source": sset.source_id, "count": len(sset),
                                    "seed": sset.seed, "ci": ci, "d": subsets.d})


def _clamp_non_negative(arr: np.ndarray, what: str) -> np.ndarray:
    negative = arr < 0.0
    if np.any(negative):
        logger.warning("%s produced %d negative interval(s); clamped to 0",
                       what, int(negative.sum()))
        arr = np.where(negative, 0.0, arr)
    return arr


def method_bounds(subsets: ExtremeSubsets, forecast: ProbabilisticForecast) -> MethodResult:
    """Reserves from the expected extreme trajectories vs the central forecast."""
    sset = subsets.source
    up_mean = _RunningMean(sset.horizon)
    for i in subsets.up_indices:
        s = sset.scenarios[i]
        up_mean.push(s.values, s.probability)
    dn_mean = _RunningMean(sset.horizon)
    for i in subsets.down_indices:
        s = sset.scenarios[i]
        dn_mean.push(s.values, s.probability)
    s_up = up_mean.finalize()
    s_dn = dn_mean.finalize()
    cf = forecast.central.values
    if forecast.kind in PRODUCTION_KINDS:
        r_up, r_dn = cf - s_up, s_dn - cf
    else:
        r_up, r_dn = s_up - cf, cf - s_dn
    r_up = _clamp_non_negative(r_up, "bounds upward reserve")
    r_dn = _clamp_non_negative(r_dn, "bounds downward reserve")
    profile = ReserveProfile(r_up=r_up, r_dn=r_dn, method="bounds",
                             params={"d": subsets.d},
                             start=forecast.start,
                             resolution_minutes=forecast.resolution_minutes)
    return MethodResult(method="bounds", profile=profile,
                        provenance={"source": sset.source_id, "d": subsets.d})


def method_prediction_interval(forecast: ProbabilisticForecast, pi: float,
                               literal_quantiles: bool = False) -> MethodResult:
    """Reserves protecting the central ``pi`` mass of the forecast envelope.

    The tail mass per side is (1 - pi) / 2. By default reserves are the
    distances from the central forecast to the tail quantiles; with
    ``literal_quantiles`` they are the raw quantile values themselves
    (the alternative reading of the defining equations), clamped at 0.
    """
    if not (0.0 < pi < 1.0):
        raise InputError("prediction interval must lie strictly inside (0, 1)")
    p_limit = (1.0 - pi) / 2.0
    lo = np.array([cdf_inverse(c, p_limit) for c in forecast.intervals])
    hi = np.array([cdf_inverse(c, 1.0 - p_limit) for c in forecast.intervals])
    if literal_quantiles:
        r_up, r_dn = hi, -lo
    elif forecast.kind in PRODUCTION_KINDS:
        cf = forecast.central.values
        r_up, r_dn = cf - lo, hi - cf
    else:
        cf = forecast.central.values
        r_up, r_dn = hi - cf, cf - lo
    r_up = _clamp_non_negative(r_up, "prediction-interval upward reserve")
    r_dn = _clamp_non_negative(r_dn, "prediction-interval downward reserve")
    profile = ReserveProfile(r_up=r_up, r_dn=r_dn, method="prediction-interval",
                             params={"pi": pi, "literal": literal_quantiles},
                             start=forecast.start,
                             resolution_minutes=forecast.resolution_minutes)
    return MethodResult(method="prediction-interval", profile=profile,
                        provenance={"source": forecast.name, "pi": pi})


def method_hybrid(results: list[MethodResult]) -> MethodResult:
    """Elementwise maximum over the constituent results, per direction."""
    if not results:
        raise InputError("hybrid needs at least one constituent result")
    horizon = len(results[0].profile)
    if any(len(r.profile) != horizon for r in results):
        raise InputError("constituent profiles must share one horizon")
    r_up = np.max(np.vstack([r.profile.r_up for r in results]), axis=0)
    r_dn = np.max(np.vstack([r.profile.r_dn for r in results]), axis=0)
    first = results[0].profile
    profile = ReserveProfile(r_up=r_up, r_dn=r_dn, method="hybrid",
                             params={"constituents": [r.method for r in results]},
                             start=first.start,
                             resolution_minutes=first.resolution_minutes)
    return MethodResult(method="hybrid", profile=profile,
                        provenance={"constituents": [r.method for r in results]})
