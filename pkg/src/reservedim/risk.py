"""Shortfall/surplus risk of a reserve profile, and risk-ceiling sizing.

Risk is the expectation-of-loss form: the empirical probability of
deviations exceeding the reserve times the distance from the reserve to the
empirical tail end. Deviations are grouped by hour of day.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .forecast import _frozen_array
from .reserves import HistoricalSeries, ReserveProfile, compute_errors

logger = logging.getLogger(__name__)

GROUPINGS = ("hour", "pooled")


@dataclass(frozen=True, eq=False)
class DeviationDistribution:
    """Empirical deviation samples per interval group (default: hour of day).

    Each group is sorted ascending and non-empty; hours without records
    borrow the nearest populated hour, recorded in ``borrowed_from``.
    """

    kind: str
    grouping: str
    groups: tuple[np.ndarray, ...]
    borrowed_from: tuple[int | None, ...]

    def __post_init__(self):
        groups = tuple(_frozen_array(g) for g in self.groups)
        if not groups or any(g.size == 0 for g in groups):
            raise InputError("every deviation group must be non-empty")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "borrowed_from", tuple(self.borrowed_from))

    def group_for_hour(self, hour: float) -> np.ndarray:
        if self.grouping == "pooled":
            return self.groups[0]
        return self.groups[int(hour) % 24]

    def counts(self) -> np.ndarray:
        return np.array([g.size for g in self.groups])


def build_deviation_distribution(history: HistoricalSeries,
                                 grouping: str = "hour") -> DeviationDistribution:
    """Group forecast errors by hour of day (or pool them all).

    Hours with no records borrow the nearest populated hour by circular
    distance, preferring the lower hour on ties, with a logged warning.
    """
    if grouping not in GROUPINGS:
        raise InputError(f"unknown grouping {grouping!r}, expected one of {GROUPINGS}")
    if len(history) == 0:
        raise InputError("empty history")
    eps = compute_errors(history)
    if grouping == "pooled":
        return DeviationDistribution(kind=history.kind, grouping=grouping,
                                     groups=(np.sort(eps),), borrowed_from=(None,))

    hours = np.floor(history.hours_of_day()).astype(int) % 24
    raw = [np.sort(eps[hours == h]) for h in range(24)]
    populated = [h for h in range(24) if raw[h].size > 0]
    groups: list[np.ndarray] = []
    borrowed: list[int | None] = []
    for h in range(24):
        if raw[h].size > 0:
            groups.append(raw[h])
            borrowed.append(None)
        else:
            src = min(populated, key=lambda p: (min(abs(p - h), 24 - abs(p - h)), p))
            logger.warning("no deviations at hour %d; borrowing hour %d", h, src)
            groups.append(raw[src])
            borrowed.append(src)
    return DeviationDistribution(kind=history.kind, grouping=grouping,
                                 groups=tuple(groups), borrowed_from=tuple(borrowed))


@dataclass(frozen=True, eq=False)
class RiskProfile:
    """Per-interval risk of being short (up) and long (down)."""

    rho_short: np.ndarray
    rho_long: np.ndarray
    method: str = ""

    def __post_init__(self):
        rho_short = np.asarray(self.rho_short, dtype=float)
        rho_long = np.asarray(self.rho_long, dtype=float)
        if rho_short.shape != rho_long.shape or rho_short.ndim != 1:
            raise InputError("risk series must be matching 1-D arrays")
        if np.any(rho_short < 0.0) or np.any(rho_long < 0.0):
            raise InputError("risk must be non-negative")
        object.__setattr__(self, "rho_short", _frozen_array(rho_short))
        object.__setattr__(self, "rho_long", _frozen_array(rho_long))

    def __len__(self) -> int:
        return self.rho_short.size


def _short_risk(samples: np.ndarray, reserve: float) -> float:
    mx = float(samples[-1])
    if reserve >= mx:
        return 0.0
    exceed = samples.size - np.searchsorted(samples, reserve, side="right")
    return (exceed / samples.size) * (mx - reserve)


def compute_risk(dist: DeviationDistribution, profile: ReserveProfile) -> RiskProfile:
    """Empirical shortfall/surplus risk of ``profile`` against ``dist``.

    Per interval, the deviation group is selected by the profile's hour of
    day. Risk of being short uses the upward reserve against the positive
    tail; risk of being long uses the downward reserve against the negative
    tail (evaluated on the negated samples).
    """
    hours = profile.hours_of_day()
    rho_short = np.empty(len(profile))
    rho_long = np.empty(len(profile))
    for t in range(len(profile)):
        samples = dist.group_for_hour(hours[t])
        rho_short[t] = _short_risk(samples, float(profile.r_up[t]))
        rho_long[t] = _short_risk(np.sort(-samples), float(profile.r_dn[t]))
    return RiskProfile(rho_short=rho_short, rho_long=rho_long, method=profile.method)


def _minimal_reserve(samples: np.ndarray, limit: float) -> float:
    """Smallest r >= 0 with short-form risk at or below ``limit``.

    Risk is piecewise linear and non-increasing in r between order
    statistics, so a scan over the pieces with a linear solve inside the
    active piece is exact.
    """
    if limit < 0.0:
        raise InputError("risk limit must be non-negative")
    n = samples.size
    mx = float(samples[-1])
    if mx <= 0.0:
        return 0.0
    starts = [0.0] + [float(v) for v in np.unique(samples) if 0.0 < v < mx]
    bounds = starts[1:] + [mx]
    for lo, hi in zip(starts, bounds):
        exceed = n - np.searchsorted(samples, lo, side="right")
        if (exceed / n) * (mx - lo) <= limit:
            return lo
        r_star = mx - limit * n / exceed
        if r_star < hi:
            return float(r_star)
    return mx


def size_to_risk(dist: DeviationDistribution, rho_limit: float,
                 direction: str = "both") -> ReserveProfile:
    """Smallest hourly reserves whose risk stays at or below ``rho_limit``.

    Returns one interval per hour of day (24 for hourly grouping, 1 for
    pooled). ``direction`` selects which side is sized; the other is zero.
    """
    if direction not in ("up", "down", "both"):
        raise InputError("direction must be 'up', 'down' or 'both'")
    n_groups = len(dist.groups)
    r_up = np.zeros(n_groups)
    r_dn = np.zeros(n_groups)
    for g, samples in enumerate(dist.groups):
        if direction in ("up", "both"):
            r_up[g] = _minimal_reserve(samples, rho_limit)
        if direction in ("down", "both"):
            r_dn[g] = _minimal_reserve(np.sort(-samples), rho_limit)
    return ReserveProfile(r_up=r_up, r_dn=r_dn, method="risk-based",
                          params={"rho_limit": rho_limit, "direction": direction})
