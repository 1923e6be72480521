"""Gaussian-copula scenario generation from probabilistic forecasts.

Pipeline per scenario: draw iid standard normals, correlate them through the
Cholesky factor of a lag-decay correlation matrix, map to uniforms with the
standard normal CDF, and push each uniform through the interval's inverse
CDF. Scenario probabilities come from the per-interval band masses and are
normalized with a log-space softmax.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InputError, NumericError
from .forecast import ProbabilisticForecast, _check_kind, _frozen_array, cdf_inverse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CopulaParams:
    """Temporal-correlation parameters.

    ``theta`` is the lag-1 correlation, ``omega`` the linear decay per
    additional lag, and ``jitter`` the eigenvalue floor used when repairing
    a non positive-definite matrix.
    """

    theta: float
    omega: float
    jitter: float = 1e-10

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0):
            raise InputError("theta must lie in [0, 1]")
        if self.omega < 0.0:
            raise InputError("omega must be non-negative")
        if self.jitter < 0.0:
            raise InputError("jitter must be non-negative")


def lag_correlation_matrix(T: int, params: CopulaParams) -> np.ndarray:
    """The raw linear-decay correlation matrix, floored at zero.

    Entry at lag L >= 1 is ``max(theta - (L - 1) * omega, 0)``. For steep
    decays this matrix is not positive definite; see
    :func:`build_covariance` for the repaired version.
    """
    if T < 1:
        raise InputError("horizon must be at least 1")
    out = np.eye(T)
    for lag in range(1, T):
        rho = max(params.theta - (lag - 1) * params.omega, 0.0)
        if rho == 0.0:
            break
        out += rho * (np.eye(T, k=lag) + np.eye(T, k=-lag))
    return out


def build_covariance(T: int, params: CopulaParams) -> np.ndarray:
    """Positive-definite unit-diagonal correlation matrix for the copula.

    Builds the raw lag-decay matrix and, only if its smallest eigenvalue
    falls below ``params.jitter``, repairs it by clipping eigenvalues at the
    jitter floor and re-normalizing to unit diagonal. An already valid
    matrix is returned unchanged.
    """
    raw = lag_correlation_matrix(T, params)
    eigvals = np.linalg.eigvalsh(raw)
    if eigvals.min() >= params.jitter:
        return raw
    w, v = np.linalg.eigh(raw)
    w = np.clip(w, params.jitter, None)
    repaired = (v * w) @ v.T
    d = np.sqrt(np.diag(repaired))
    repaired = repaired / np.outer(d, d)
    repaired = (repaired + repaired.T) / 2.0
    np.fill_diagonal(repaired, 1.0)
    logger.debug("repaired correlation matrix for T=%d (min eigenvalue %.3e)", T, eigvals.min())
    return repaired


def cholesky_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular factor C with C @ C.T == sigma."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InputError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise InputError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericError("matrix not positive definite") from exc


def std_normal_cdf(y):
    """Standard normal CDF, mapping correlated normals to uniforms."""
    return ndtr(y)


def std_normal_inv(p):
    """Inverse standard normal CDF; rejects the infinite endpoints."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise InputError("infinite quantile: p must lie strictly inside (0, 1)")
    out = ndtri(p_arr)
    return float(out) if np.isscalar(p) else out


def _substream(seed: int, index: int) -> np.random.Generator:
    # Keyed per scenario so results do not depend on draw order or threads.
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def sample_correlated_normals(T: int, count: int, params: CopulaParams,
                              seed: int, workers: int = 1) -> np.ndarray:
    """Draw ``count`` correlated normal vectors of length T, shape (count, T).

    Each row uses its own counter-based substream keyed by (seed, row), so
    the result is bit-identical for any worker count.
    """
    if count < 1:
        raise InputError("count must be at least 1")
    chol = cholesky_factor(build_covariance(T, params))
    x = np.empty((count, T))

    def fill(s: int) -> None:
        x[s] = _substream(seed, s).standard_normal(T)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(count)))
    else:
        for s in range(count):
            fill(s)
    return x @ chol.T


@dataclass(frozen=True, eq=False)
class Scenario:
    """One sampled trajectory with its probability weight."""

    values: np.ndarray
    log_weight: float
    probability: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Scenarios sampled from one forecast, with normalized probabilities."""

    source_id: str
    kind: str
    start: datetime
    resolution_minutes: int
    scenarios: tuple[Scenario, ...]
    seed: int

    def __post_init__(self):
        _check_kind(self.kind)
        scenarios = tuple(self.scenarios)
        if not scenarios:
            raise InputError("scenario set must not be empty")
        total = float(sum(s.probability for s in scenarios))
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"scenario probabilities sum to {total}, expected 1")
        horizon = scenarios[0].values.size
        if any(s.values.size != horizon for s in scenarios):
            raise InputError("scenarios must share one horizon")
        object.__setattr__(self, "scenarios", scenarios)

    def __len__(self) -> int:
        return len(self.scenarios)

    @property
    def horizon(self) -> int:
        return self.scenarios[0].values.size

    def values_matrix(self) -> np.ndarray:
        return np.vstack([s.values for s in self.scenarios])

    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    def log_weights(self) -> np.ndarray:
        return np.array([s.log_weight for s in self.scenarios])


def _band_masses(levels: np.ndarray) -> np.ndarray:
    # Bands are the gaps between consecutive levels plus the two tails.
    return np.diff(levels, prepend=0.0, append=1.0)


def softmax_normalize(log_weights: np.ndarray) -> np.ndarray:
    """Max-shifted softmax of log weights; sums to 1."""
    log_weights = np.asarray(log_weights, dtype=float)
    shifted = np.exp(log_weights - log_weights.max())
    return shifted / shifted.sum()


def generate_scenarios(forecast: ProbabilisticForecast, count: int,
                       params: CopulaParams, seed: int,
                       workers: int = 1) -> ScenarioSet:
    """Sample ``count`` correlated scenarios from ``forecast``.

    Deterministic for a fixed seed regardless of ``workers``; scenario order
    is by index. Every value lies inside the forecast envelope because the
    inverse CDF clamps its tails.

    Parameters
    ----------
    forecast : ProbabilisticForecast
        Source forecast providing one CDF per interval.
    count : int
        Number of scenarios S, at least 1.
    params : CopulaParams
        Temporal correlation parameters.
    seed : int
        Root seed for the per-scenario substreams.
    workers : int
        Thread count for the sampling stage.
    """
    if count < 1:
        raise InputError("empty scenario request")
    T = forecast.horizon
    y = sample_correlated_normals(T, count, params, seed, workers=workers)
    z = std_normal_cdf(y)

    values = np.empty((count, T))
    log_w = np.zeros(count)
    for t, cdf in enumerate(forecast.intervals):
        values[:, t] = cdf_inverse(cdf, z[:, t])
        if cdf.is_degenerate:
            continue  # single band of mass 1 contributes log(1) = 0
        masses = _band_masses(cdf.levels)
        band = np.searchsorted(cdf.levels, z[:, t], side="right")
        log_w += np.log(masses[band])

    pis = softmax_normalize(log_w)
    scenarios = tuple(
        Scenario(values=values[s], log_weight=float(log_w[s]), probability=float(pis[s]))
        for s in range(count)
    )
    return ScenarioSet(source_id=forecast.name, kind=forecast.kind,
                       start=forecast.start,
                       resolution_minutes=forecast.resolution_minutes,
                       scenarios=scenarios, seed=seed)


@dataclass(frozen=True, eq=False)
class NetDemandScenarioSet:
    """Net-demand combinations load - wind - solar over all index triples."""

    start: datetime
    resolution_minutes: int
    values: np.ndarray        # (N, T)
    probabilities: np.ndarray  # (N,)
    index_triples: np.ndarray  # (N, 3) source indices (i, j, k)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if values.ndim != 2 or probs.shape != (values.shape[0],):
            raise InputError("values and probabilities shapes disagree")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise InputError(f"net-demand probabilities sum to {probs.sum()}, expected 1")
        object.__setattr__(self, "values", _frozen_array(values))
        object.__setattr__(self, "probabilities", _frozen_array(probs))
        object.__setattr__(self, "index_triples", _frozen_array(self.index_triples, dtype=int))

    def __len__(self) -> int:
        return self.values.shape[0]


def combine_net_demand(load: ScenarioSet, wind: ScenarioSet, solar: ScenarioSet,
                       cap: int = 1_000_000) -> NetDemandScenarioSet:
    """All (i, j, k) combinations of load - wind - solar scenarios.

    Probabilities multiply across the three sets, so they still sum to 1.
    Refuses combinations beyond ``cap`` elements; subsample the inputs first
    if that triggers.
    """
    if not (load.horizon == wind.horizon == solar.horizon):
        raise InputError("scenario sets must share one horizon")
    total = len(load) * len(wind) * len(solar)
    if total > cap:
        raise InputError(
            f"{total} combinations exceed cap {cap}; subsample the input sets "
            "or raise the cap"
        )
    lv, wv, sv = load.values_matrix(), wind.values_matrix(), solar.values_matrix()
    lp, wp, sp = load.probabilities(), wind.probabilities(), solar.probabilities()

    triples = np.array([(i, j, k)
                        for i in range(len(load))
                        for j in range(len(wind))
                        for k in range(len(solar))], dtype=int).reshape(total, 3)
    values = lv[triples[:, 0]] - wv[triples[:, 1]] - sv[triples[:, 2]]
    probs = lp[triples[:, 0]] * wp[triples[:, 1]] * sp[triples[:, 2]]
    return NetDemandScenarioSet(start=load.start,
                                resolution_minutes=load.resolution_minutes,
                                values=values, probabilities=probs,
                                index_triples=triples)


def estimate_lag_correlations(history) -> CopulaParams:
    """Convenience estimate of (theta, omega) from a historical series.

    Plain lag-1/lag-2 Pearson autocorrelations of the forecast errors with a
    linear-decay fit (omega = r1 - r2). This is an estimator supplied for
    convenience, not a fitting procedure with any optimality claim.
    """
    eps = np.asarray(history.actual, dtype=float) - np.asarray(history.forecast, dtype=float)
    if eps.size < 3:
        raise InputError("need at least 3 records to estimate lag correlations")

    def _corr(a, b):
        if a.std() == 0.0 or b.std() == 0.0:
            return 0.0
        return float(np.corrcoef(a, b)[0, 1])

    r1 = _corr(eps[:-1], eps[1:])
    r2 = _corr(eps[:-2], eps[2:])
    theta = min(max(r1, 0.0), 1.0)
    omega = max(r1 - r2, 0.0)
    return CopulaParams(theta=theta, omega=omega)
