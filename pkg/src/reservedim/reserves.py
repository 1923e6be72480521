"""Dynamic reserve requirements from historical forecast errors.

Errors are itemized by direction, binned over an explanatory variable
(forecast magnitude, its rate of change, or hour of day) on equal-width
edges, and looked up with an empirical quantile at the requested confidence
interval. Per-source requirements combine by root sum of squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import InputError
from .forecast import PRODUCTION_KINDS, TimeSeries, _check_kind, _frozen_array

logger = logging.getLogger(__name__)

EXPLANATORY_KINDS = ("magnitude", "rate", "hour")


@dataclass(frozen=True, eq=False)
class HistoricalSeries:
    """Aligned (timestamp, forecast MW, actual MW) records for one variable."""

    kind: str
    timestamps: tuple[datetime, ...]
    forecast: np.ndarray
    actual: np.ndarray
    resolution_minutes: int

    def __post_init__(self):
        _check_kind(self.kind)
        timestamps = tuple(self.timestamps)
        forecast = np.asarray(self.forecast, dtype=float)
        actual = np.asarray(self.actual, dtype=float)
        if not (len(timestamps) == forecast.size == actual.size) or forecast.size < 1:
            raise InputError("timestamps, forecast and actual must have equal non-zero length")
        if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
            raise InputError("timestamps must be strictly increasing")
        if self.resolution_minutes <= 0:
            raise InputError("resolution must be positive")
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "forecast", _frozen_array(forecast))
        object.__setattr__(self, "actual", _frozen_array(actual))

    def __len__(self) -> int:
        return len(self.timestamps)

    def hours_of_day(self) -> np.ndarray:
        return np.array([t.hour + t.minute / 60.0 + t.second / 3600.0 for t in self.timestamps])


def compute_errors(history: HistoricalSeries) -> np.ndarray:
    """Forecast errors, actual minus forecast, one per record."""
    return history.actual - history.forecast


def itemize_errors(errors: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Split errors into (up, down) reserve-need magnitudes; zeros dropped.

    For load and net demand a positive error (actual above forecast) is an
    upward need. For wind and solar the convention inverts: surplus
    production is a downward need.
    """
    _check_kind(kind)
    errors = np.asarray(errors, dtype=float)
    pos = errors[errors > 0.0]
    neg = -errors[errors < 0.0]
    if kind in PRODUCTION_KINDS:
        return neg, pos
    return pos, neg


@dataclass(frozen=True, eq=False)
class ExplanatoryVariable:
    """Conditioning feature values, one per record of a series."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in EXPLANATORY_KINDS:
            raise InputError(f"unknown explanatory kind {self.kind!r}, expected one of {EXPLANATORY_KINDS}")
        object.__setattr__(self, "values", _frozen_array(self.values))


def explanatory_series(kind: str, values: np.ndarray, start: datetime | None = None,
                       resolution_minutes: int | None = None) -> np.ndarray:
    """Explanatory-variable series for a forecast trajectory.

    ``magnitude`` is the trajectory itself, ``rate`` its per-interval change
    (first interval uses the forward difference), and ``hour`` the hour of
    day derived from the grid, which is required in that case.
    """
    values = np.asarray(values, dtype=float)
    if kind == "magnitude":
        return values.copy()
    if kind == "rate":
        if values.size < 2:
            return np.zeros(values.size)
        rate = np.empty(values.size)
        rate[1:] = np.diff(values)
        rate[0] = values[1] - values[0]
        return rate
    if kind == "hour":
        if start is None or resolution_minutes is None:
            raise InputError("hour explanatory needs the series' time grid")
        ts = TimeSeries(kind="net_demand", start=start,
                        resolution_minutes=resolution_minutes, values=np.zeros(values.size))
        return ts.hours_of_day()
    raise InputError(f"unknown explanatory kind {kind!r}")


def derive_explanatory(history: HistoricalSeries, kind: str) -> ExplanatoryVariable:
    """Explanatory variable of a historical series, from its forecasts."""
    if kind == "hour":
        return ExplanatoryVariable(kind=kind, values=history.hours_of_day())
    return ExplanatoryVariable(
        kind=kind,
        values=explanatory_series(kind, history.forecast, history.timestamps[0],
                                  history.resolution_minutes),
    )


@dataclass(frozen=True, eq=False)
class ReserveModel:
    """Binned error populations keyed by an explanatory variable.

    ``edges`` has ``bin_count + 1`` entries; populations are sorted
    ascending. Bin b covers (edges[b-1], edges[b]], with the minimum record
    folded into bin 1.
    """

    variable_kind: str
    explanatory_kind: str
    bin_count: int
    edges: np.ndarray
    up_bins: tuple[np.ndarray, ...]
    down_bins: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", _frozen_array(self.edges))
        object.__setattr__(self, "up_bins", tuple(_frozen_array(b) for b in self.up_bins))
        object.__setattr__(self, "down_bins", tuple(_frozen_array(b) for b in self.down_bins))


def _bin_indices(edges: np.ndarray, nu: np.ndarray, bin_count: int) -> np.ndarray:
    # (l_{b-1}, l_b] assignment; values at or below l_0 clamp into bin 1,
    # values above l_B into bin B.
    idx = np.searchsorted(edges, nu, side="left")
    return np.clip(idx, 1, bin_count)


def build_reserve_model(history: HistoricalSeries, nu: ExplanatoryVariable,
                        bins: int) -> ReserveModel:
    """Bin the directional error populations over ``nu``.

    Parameters
    ----------
    history : HistoricalSeries
        Aligned forecast/actual records.
    nu : ExplanatoryVariable
        One conditioning value per record.
    bins : int
        Number of equal-width bins B; a constant explanatory variable
        collapses to a single bin with a logged warning.
    """
    if bins < 1:
        raise InputError("bin count must be at least 1")
    if len(history) < 2:
        raise InputError("need at least 2 records to build a reserve model")
    if nu.values.size != len(history):
        raise InputError("explanatory series length must match the history")

    errors = compute_errors(history)
    lo, hi = float(nu.values.min()), float(nu.values.max())
    if hi == lo:
        logger.warning("constant explanatory variable; using a single bin")
        bins = 1
        edges = np.array([lo, hi])
        assignment = np.ones(len(history), dtype=int)
    else:
        edges = lo + np.arange(bins + 1) / bins * (hi - lo)
        assignment = _bin_indices(edges, nu.values, bins)

    up_bins = [[] for _ in range(bins)]
    down_bins = [[] for _ in range(bins)]
    production = history.kind in PRODUCTION_KINDS
    for eps, b in zip(errors, assignment):
        if eps == 0.0:
            continue
        magnitude = abs(eps)
        needs_up = (eps < 0.0) if production else (eps > 0.0)
        (up_bins if needs_up else down_bins)[b - 1].append(magnitude)

    return ReserveModel(
        variable_kind=history.kind,
        explanatory_kind=nu.kind,
        bin_count=bins,
        edges=edges,
        up_bins=tuple(np.sort(np.asarray(b, dtype=float)) for b in up_bins),
        down_bins=tuple(np.sort(np.asarray(b, dtype=float)) for b in down_bins),
    )


def empirical_quantile(population: np.ndarray, ci: float) -> float:
    """Empirical quantile with linear interpolation between order statistics.

    Rank h = (n - 1) * ci + 1 over the sorted sample, interpolating linearly
    between the bracketing order statistics.
    """
    population = np.asarray(population, dtype=float)
    if population.size == 0:
        raise InputError("empty population")
    if not (0.0 <= ci <= 1.0):
        raise InputError("confidence interval must lie in [0, 1]")
    return float(np.quantile(population, ci))


def _effective_bins(bins: tuple[np.ndarray, ...], direction: str) -> list[np.ndarray]:
    """Resolve empty bins to the nearest populated one (ties prefer lower)."""
    n = len(bins)
    populated = [i for i, b in enumerate(bins) if b.size > 0]
    if not populated:
        logger.warning("all %s-direction bins empty; requirements fall back to 0", direction)
        return [np.array([])] * n
    out = []
    for i, b in enumerate(bins):
        if b.size > 0:
            out.append(b)
        else:
            nearest = min(populated, key=lambda j: (abs(j - i), j))
            out.append(bins[nearest])
    return out


def reserve_requirements(model: ReserveModel, nu_values: np.ndarray, ci: float,
                         start: datetime | None = None,
                         resolution_minutes: int | None = None) -> "ReserveProfile":
    """Per-interval up/down reserves for an anticipated explanatory series.

    Each interval selects its bin by ``nu_values`` with edge clamping and
    takes the empirical quantile of that bin's population at ``ci``. Empty
    bins borrow the nearest populated bin; if a direction has no errors at
    all its requirement is 0.
    """
    nu_values = np.asarray(nu_values, dtype=float)
    idx = _bin_indices(model.edges, nu_values, model.bin_count)
    up_pops = _effective_bins(model.up_bins, "up")
    down_pops = _effective_bins(model.down_bins, "down")

    def lookup(pops, b):
        pop = pops[b - 1]
        return empirical_quantile(pop, ci) if pop.size else 0.0

    r_up = np.array([lookup(up_pops, b) for b in idx])
    r_dn = np.array([lookup(down_pops, b) for b in idx])
    return ReserveProfile(r_up=r_up, r_dn=r_dn, method="dynamic",
                          params={"ci": ci, "bins": model.bin_count,
                                  "explanatory": model.explanatory_kind},
                          start=start, resolution_minutes=resolution_minutes)


@dataclass(frozen=True, eq=False)
class ReserveProfile:
    """Per-interval upward/downward reserve requirements in MW."""

    r_up: np.ndarray
    r_dn: np.ndarray
    method: str = ""
    params: dict = field(default_factory=dict)
    start: datetime | None = None
    resolution_minutes: int | None = None

    def __post_init__(self):
        r_up = np.asarray(self.r_up, dtype=float)
        r_dn = np.asarray(self.r_dn, dtype=float)
        if r_up.shape != r_dn.shape or r_up.ndim != 1 or r_up.size == 0:
            raise InputError("reserve profile needs matching non-empty up/down series")
        if np.any(r_up < 0.0) or np.any(r_dn < 0.0):
            raise InputError("reserves must be non-negative")
        object.__setattr__(self, "r_up", _frozen_array(r_up))
        object.__setattr__(self, "r_dn", _frozen_array(r_dn))
        object.__setattr__(self, "params", dict(self.params))

    def __len__(self) -> int:
        return self.r_up.size

    def timestamps(self) -> list[datetime] | None:
        if self.start is None or self.resolution_minutes is None:
            return None
        ts = TimeSeries(kind="net_demand", start=self.start,
                        resolution_minutes=self.resolution_minutes,
                        values=np.zeros(len(self)))
        return ts.timestamps()

    def hours_of_day(self) -> np.ndarray:
        """Hour of day per interval; without a grid, assumes hourly from 0."""
        ts = self.timestamps()
        if ts is None:
            return np.arange(len(self)) % 24
        return np.array([t.hour + t.minute / 60.0 for t in ts])

    def with_grid(self, start: datetime, resolution_minutes: int) -> "ReserveProfile":
        return ReserveProfile(r_up=self.r_up, r_dn=self.r_dn, method=self.method,
                              params=self.params, start=start,
                              resolution_minutes=resolution_minutes)


def rss_combine(load: ReserveProfile, wind: ReserveProfile,
                solar: ReserveProfile) -> ReserveProfile:
    """Root-sum-square combination of per-source requirements.

    Assumes uncorrelated sources; applied per interval and direction.
    """
    if not (len(load) == len(wind) == len(solar)):
        raise InputError("profiles must share one horizon")
    r_up = np.sqrt(load.r_up**2 + wind.r_up**2 + solar.r_up**2)
    r_dn = np.sqrt(load.r_dn**2 + wind.r_dn**2 + solar.r_dn**2)
    return ReserveProfile(r_up=r_up, r_dn=r_dn, method="rss",
                          params={"components": [load.method, wind.method, solar.method]},
                          start=load.start, resolution_minutes=load.resolution_minutes)
