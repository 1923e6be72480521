"""Forecast data types and piecewise-linear CDF machinery.

A probabilistic forecast is carried as one non-parametric CDF per interval,
given as (probability level, MW) threshold pairs. All types are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import InputError

VARIABLE_KINDS = ("load", "wind", "solar", "net_demand")

# Production variables invert the error sign convention: higher-than-forecast
# production is a surplus and maps to downward reserve needs.
PRODUCTION_KINDS = ("wind", "solar")


def _check_kind(kind: str) -> None:
    if kind not in VARIABLE_KINDS:
        raise InputError(f"unknown variable kind {kind!r}, expected one of {VARIABLE_KINDS}")


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """A regular MW series for one variable.

    Parameters
    ----------
    kind : str
        One of ``load``, ``wind``, ``solar``, ``net_demand``.
    start : datetime
        Timestamp of the first interval.
    resolution_minutes : int
        Interval length; must be positive.
    values : array_like
        MW per interval. Production and load series must be non-negative;
        net demand may take any sign.
    """

    kind: str
    start: datetime
    resolution_minutes: int
    values: np.ndarray

    def __post_init__(self):
        _check_kind(self.kind)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise InputError("values must be a non-empty 1-D series")
        if self.resolution_minutes <= 0:
            raise InputError("resolution must be positive")
        if self.kind != "net_demand" and np.any(values < 0):
            raise InputError(f"{self.kind} values must be non-negative")
        object.__setattr__(self, "values", _frozen_array(values))

    def __len__(self) -> int:
        return self.values.size

    def timestamps(self) -> list[datetime]:
        step = timedelta(minutes=self.resolution_minutes)
        return [self.start + i * step for i in range(len(self))]

    def hours_of_day(self) -> np.ndarray:
        """Fractional hour of day in [0, 24) for each interval."""
        return np.array([t.hour + t.minute / 60.0 + t.second / 3600.0 for t in self.timestamps()])


@dataclass(frozen=True, eq=False)
class IntervalCdf:
    """Non-parametric CDF of one interval as (probability, MW) thresholds.

    Probability levels must be strictly increasing inside (0, 1) and values
    non-decreasing. A CDF whose values are all identical is degenerate (all
    mass at one point, e.g. night-hour solar) and behaves as a step function.
    """

    levels: np.ndarray
    values: np.ndarray
    is_degenerate: bool = field(init=False)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if levels.ndim != 1 or levels.shape != values.shape or levels.size < 1:
            raise InputError("levels and values must be matching non-empty 1-D arrays")
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise InputError("probability levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0.0):
            raise InputError("probability levels must be strictly increasing")
        if np.any(np.diff(values) < 0.0):
            raise InputError("threshold values must be non-decreasing (quantile crossing)")
        degenerate = bool(values[-1] == values[0])
        if not degenerate and values.size < 2:
            raise InputError("a non-degenerate CDF needs at least 2 thresholds")
        object.__setattr__(self, "levels", _frozen_array(levels))
        object.__setattr__(self, "values", _frozen_array(values))
        object.__setattr__(self, "is_degenerate", degenerate)

    @property
    def atom(self) -> float:
        """The single mass point of a degenerate CDF."""
        return float(self.values[0])

    @property
    def lower(self) -> float:
        return float(self.values[0])

    @property
    def upper(self) -> float:
        return float(self.values[-1])

    @classmethod
    def degenerate(cls, value: float) -> "IntervalCdf":
        return cls(levels=np.array([0.5]), values=np.array([float(value)]))


def cdf_eval(cdf: IntervalCdf, v) -> float | np.ndarray:
    """Evaluate the piecewise-linear CDF at MW value(s) ``v``.

    Linear interpolation between thresholds; outside the outermost values the
    probability clamps to the first/last level (no tail extrapolation). A
    degenerate CDF is a step: 0 below the atom, 1 at or above it.
    """
    v_arr = np.asarray(v, dtype=float)
    if cdf.is_degenerate:
        out = np.where(v_arr >= cdf.atom, 1.0, 0.0)
        return float(out) if np.isscalar(v) else out

    ps, vs = cdf.levels, cdf.values
    idx = np.searchsorted(vs, v_arr, side="right")
    out = np.empty(v_arr.shape, dtype=float)
    below = idx == 0
    above = idx == vs.size
    inner = ~(below | above)
    out[below] = ps[0]
    out[above] = ps[-1]
    if np.any(inner):
        i = idx[inner]
        v0, v1 = vs[i - 1], vs[i]
        p0, p1 = ps[i - 1], ps[i]
        out[inner] = p0 + (v_arr[inner] - v0) * (p1 - p0) / (v1 - v0)
    return float(out) if np.isscalar(v) else out


def cdf_inverse(cdf: IntervalCdf, z) -> float | np.ndarray:
    """Map probability value(s) ``z`` in [0, 1] to MW through the inverse CDF.

    Exact inverse of :func:`cdf_eval` on the interpolated region; ``z``
    outside the supplied level range clamps to the outermost threshold
    value. A degenerate CDF returns its atom for every ``z``.
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0.0) or np.any(z_arr > 1.0):
        raise InputError("probability must lie in [0, 1]")
    if cdf.is_degenerate:
        out = np.full(z_arr.shape, cdf.atom)
        return float(out) if np.isscalar(z) else out
    out = np.interp(z_arr, cdf.levels, cdf.values)
    return float(out) if np.isscalar(z) else out


@dataclass(frozen=True, eq=False)
class ProbabilisticForecast:
    """Per-interval CDFs plus the central (best-guess) trajectory.

    The central value must lie inside the envelope spanned by each
    interval's outermost thresholds, and every interval shares the central
    series' timestamp grid.
    """

    central: TimeSeries
    intervals: tuple[IntervalCdf, ...]
    name: str = ""

    def __post_init__(self):
        intervals = tuple(self.intervals)
        if len(intervals) != len(self.central):
            raise InputError(
                f"forecast has {len(intervals)} interval CDFs for "
                f"{len(self.central)} central values"
            )
        for t, (cdf, cf) in enumerate(zip(intervals, self.central.values)):
            if not (cdf.lower <= cf <= cdf.upper):
                raise InputError(
                    f"central value {cf} at interval {t} outside the forecast "
                    f"envelope [{cdf.lower}, {cdf.upper}]"
                )
        object.__setattr__(self, "intervals", intervals)

    @property
    def kind(self) -> str:
        return self.central.kind

    @property
    def horizon(self) -> int:
        return len(self.central)

    @property
    def start(self) -> datetime:
        return self.central.start

    @property
    def resolution_minutes(self) -> int:
        return self.central.resolution_minutes

    def timestamps(self) -> list[datetime]:
        return self.central.timestamps()

    def lower_envelope(self) -> np.ndarray:
        return np.array([c.lower for c in self.intervals])

    def upper_envelope(self) -> np.ndarray:
        return np.array([c.upper for c in self.intervals])

    def quantile_trajectory(self, z: float) -> np.ndarray:
        """Inverse-CDF value at probability ``z`` for every interval."""
        return np.array([cdf_inverse(c, z) for c in self.intervals])
