"""End-to-end pipeline: inputs, all methods, risk, sensitivity, manifest.

The pipeline mirrors the study layout: the solar variable carries the
probabilistic forecast while load and wind enter with deterministic
forecasts; anticipative solar components combine with the recursive
load/wind components by root sum of squares. All randomness flows from the
single configured seed.
"""

from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from ._version import VERSION
from .errors import InputError, NumericError, ReserveDimError
from .forecast import ProbabilisticForecast, TimeSeries
from .io import (file_sha256, load_deterministic_forecast, load_forecast,
                 load_history, write_moments_validation, write_reserves,
                 write_risk, write_scenarios, write_sensitivity)
from .methods import (MethodResult, extreme_count, method_all_scenarios,
                      method_bounds, method_deterministic,
                      method_extreme_scenarios, method_hybrid,
                      method_prediction_interval, select_extremes)
from .moments import MomentSeries, forecast_moments, nrmse, scenario_moments
from .reserves import (HistoricalSeries, ReserveProfile, build_reserve_model,
                       derive_explanatory, rss_combine)
from .risk import build_deviation_distribution, compute_risk, size_to_risk
from .scenarios import CopulaParams, ScenarioSet, generate_scenarios

logger = logging.getLogger(__name__)

METHOD_TOKENS = {
    "deterministic": "deterministic",
    "all": "all-scenarios",
    "extreme": "extreme-scenarios",
    "bounds": "bounds",
    "pi": "prediction-interval",
    "risk": "risk-based",
    "hybrid": "hybrid",
}
SCENARIO_METHODS = ("all", "extreme", "bounds")
SENSITIVITY_CIS = (0.8, 0.9, 0.95)
SENSITIVITY_PIS = (0.8, 0.9, 0.95)
DEFAULT_LEVELS = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass
class RunConfig:
    """Flat configuration for one pipeline run; JSON keys mirror the fields."""

    load_history: str
    wind_history: str
    solar_history: str
    load_forecast: str
    wind_forecast: str
    solar_forecast: str
    output_dir: str
    quantile_levels: tuple = DEFAULT_LEVELS
    theta: float = 0.92
    omega: float = 0.42
    jitter: float = 1e-10
    scenario_count: int = 1000
    seed: int = 1
    workers: int = 1
    bins: int = 20
    ci: float = 0.9
    pi: float = 0.9
    extreme_fraction: float = 0.1
    risk_limit: float = 100.0
    methods: tuple = tuple(METHOD_TOKENS)
    load_explanatory: str = "magnitude"
    wind_explanatory: str = "magnitude"
    solar_explanatory: str = "rate"

    def __post_init__(self):
        if self.scenario_count < 1:
            raise InputError("scenario_count must be at least 1")
        if self.bins < 1:
            raise InputError("bins must be at least 1")
        if self.workers < 1:
            raise InputError("workers must be at least 1")
        for name in ("ci", "pi", "extreme_fraction"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0) and not (name == "extreme_fraction" and value == 1.0):
                raise InputError(f"{name} must lie strictly inside (0, 1)")
        if self.risk_limit < 0.0:
            raise InputError("risk_limit must be non-negative")
        unknown = [m for m in self.methods if m not in METHOD_TOKENS]
        if unknown:
            raise InputError(f"unknown method token(s) {unknown}; expected {list(METHOD_TOKENS)}")
        self.methods = tuple(self.methods)
        self.quantile_levels = tuple(float(l) for l in self.quantile_levels)

    @classmethod
    def from_json(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"{path}: unknown config key(s) {sorted(unknown)}")
        if overrides:
            raw.update({k: v for k, v in overrides.items() if v is not None})
        missing = [f.name for f in fields(cls)
                   if f.name not in raw and f.default is None and f.default_factory is None]  # pragma: no cover
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise InputError(f"{path}: {exc}") from exc
        cfg.validate_paths()
        return cfg

    def validate_paths(self) -> None:
        for name in ("load_history", "wind_history", "solar_history",
                     "load_forecast", "wind_forecast", "solar_forecast"):
            p = Path(getattr(self, name))
            if not p.exists():
                raise InputError(f"{name} path does not exist: {p}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    def copula(self) -> CopulaParams:
        return CopulaParams(theta=self.theta, omega=self.omega, jitter=self.jitter)

    def input_paths(self) -> dict:
        return {name: getattr(self, name)
                for name in ("load_history", "wind_history", "solar_history",
                             "load_forecast", "wind_forecast", "solar_forecast")}


@dataclass
class RunManifest:
    """Reproducibility record: config echo, input hashes, version, timings."""

    config: dict
    input_hashes: dict
    version: str
    seed: int
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"config": self.config, "input_hashes": self.input_hashes,
                   "version": self.version, "seed": self.seed,
                   "timings": self.timings}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, path: str | Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return cls(config=raw["config"], input_hashes=raw["input_hashes"],
                   version=raw["version"], seed=raw["seed"],
                   timings=raw.get("timings", {}))

    def verify_inputs(self) -> list[str]:
        """Paths whose current content hash disagrees with the recorded one."""
        mismatched = []
        for path, digest in self.input_hashes.items():
            if not Path(path).exists() or file_sha256(path) != digest:
                mismatched.append(path)
        return mismatched


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    logger.info("stage %s", name)
    try:
        yield
    except ReserveDimError as exc:
        raise type(exc)(f"stage '{name}': {exc}") from exc
    except Exception as exc:
        raise NumericError(f"stage '{name}': {exc}") from exc
    timings[name] = time.perf_counter() - t0


@contextmanager
def _output_lock(out_dir: Path):
    lock = out_dir / ".reservedim.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"output directory is locked by another run: {lock}") from None
    try:
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def resample_history(history: HistoricalSeries, target_minutes: int) -> HistoricalSeries:
    """Average a finer-resolution history onto a coarser grid."""
    if history.resolution_minutes == target_minutes:
        return history
    if target_minutes % history.resolution_minutes != 0:
        raise InputError(
            f"cannot resample {history.resolution_minutes}-minute data to "
            f"{target_minutes} minutes (not an integer multiple)"
        )
    logger.info("resampling %s history from %d to %d minutes by interval mean",
                history.kind, history.resolution_minutes, target_minutes)
    buckets: dict = {}
    for ts, f, a in zip(history.timestamps, history.forecast, history.actual):
        minutes = ts.hour * 60 + ts.minute
        anchor = datetime.combine(ts.date(), datetime.min.time(), tzinfo=ts.tzinfo)
        key = anchor + timedelta(minutes=(minutes // target_minutes) * target_minutes)
        buckets.setdefault(key, []).append((f, a))
    keys = sorted(buckets)
    forecast = np.array([np.mean([p[0] for p in buckets[k]]) for k in keys])
    actual = np.array([np.mean([p[1] for p in buckets[k]]) for k in keys])
    return HistoricalSeries(kind=history.kind, timestamps=tuple(keys),
                            forecast=forecast, actual=actual,
                            resolution_minutes=target_minutes)


def net_demand_history(load: HistoricalSeries, wind: HistoricalSeries,
                       solar: HistoricalSeries) -> HistoricalSeries:
    """Align the three histories on shared timestamps and net them out."""
    target = max(load.resolution_minutes, wind.resolution_minutes,
                 solar.resolution_minutes)
    load, wind, solar = (resample_history(h, target) for h in (load, wind, solar))
    common = sorted(set(load.timestamps) & set(wind.timestamps) & set(solar.timestamps))
    if not common:
        raise InputError("histories share no timestamps after alignment")
    if len(common) < len(load.timestamps):
        logger.info("netting on %d shared timestamps", len(common))

    def select(h: HistoricalSeries) -> tuple[np.ndarray, np.ndarray]:
        index = {ts: i for i, ts in enumerate(h.timestamps)}
        rows = [index[ts] for ts in common]
        return h.forecast[rows], h.actual[rows]

    lf, la = select(load)
    wf, wa = select(wind)
    sf, sa = select(solar)
    return HistoricalSeries(kind="net_demand", timestamps=tuple(common),
                            forecast=lf - wf - sf, actual=la - wa - sa,
                            resolution_minutes=target)


def validate_moments(forecast: ProbabilisticForecast, sset: ScenarioSet,
                     n_grid: int = 10_000) -> tuple[MomentSeries, MomentSeries, dict]:
    """Forecast vs scenario moments and the %NRMSE per moment.

    Mean and variance compare on all intervals; skewness and excess kurtosis
    only where both sides are defined.
    """
    fm = forecast_moments(forecast, n_grid)
    sm = scenario_moments(sset)
    both = fm.defined & sm.defined
    out = {
        "mean": nrmse(sm.mean, fm.mean),
        "variance": nrmse(sm.variance, fm.variance),
    }
    if np.any(both):
        out["skewness"] = nrmse(sm.skewness[both], fm.skewness[both])
        out["kurtosis_excess"] = nrmse(sm.kurtosis_excess[both], fm.kurtosis_excess[both])
    else:
        out["skewness"] = float("nan")
        out["kurtosis_excess"] = float("nan")
    return fm, sm, out


def _hourly_to_grid(profile: ReserveProfile, timestamps: list[datetime],
                    resolution_minutes: int, method: str,
                    params: dict) -> ReserveProfile:
    hours = [t.hour for t in timestamps]
    return ReserveProfile(r_up=profile.r_up[hours], r_dn=profile.r_dn[hours],
                          method=method, params=params, start=timestamps[0],
                          resolution_minutes=resolution_minutes)


class _Pipeline:
    """One pipeline run; splits the work into named, timed stages."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out_dir = Path(cfg.output_dir)
        self.timings: dict = {}
        self.created: list[Path] = []
        self.results: dict[str, MethodResult] = {}

    # -- helpers ------------------------------------------------------

    def _emit(self, name: str) -> Path:
        path = self.out_dir / name
        self.created.append(path)
        return path

    def _needs_scenarios(self) -> bool:
        return any(m in SCENARIO_METHODS for m in self.cfg.methods)

    def _component_reserves(self, ci: float) -> dict[str, ReserveProfile]:
        return {kind: method_deterministic(self.models[kind], self.futures[kind], ci).profile
                for kind in ("load", "wind", "solar")}

    def _total(self, solar_profile: ReserveProfile, ci: float) -> ReserveProfile:
        comps = self._component_reserves(ci)
        return rss_combine(comps["load"], comps["wind"], solar_profile)

    # -- stages -------------------------------------------------------

    def load_inputs(self) -> None:
        cfg = self.cfg
        self.histories = {
            "load": load_history(cfg.load_history, "load"),
            "wind": load_history(cfg.wind_history, "wind"),
            "solar": load_history(cfg.solar_history, "solar"),
        }
        self.forecast = load_forecast(cfg.solar_forecast, list(cfg.quantile_levels), "solar")
        self.futures = {
            "load": load_deterministic_forecast(cfg.load_forecast, "load"),
            "wind": load_deterministic_forecast(cfg.wind_forecast, "wind"),
            "solar": self.forecast.central,
        }
        grids = {(f.start, f.resolution_minutes, len(f)) for f in self.futures.values()}
        if len(grids) > 1:
            raise InputError("load/wind/solar forecasts must share one time grid")
        self.timestamps = self.forecast.timestamps()

    def build_models(self) -> None:
        cfg = self.cfg
        explanatory = {"load": cfg.load_explanatory, "wind": cfg.wind_explanatory,
                       "solar": cfg.solar_explanatory}
        self.models = {}
        for kind, history in self.histories.items():
            nu = derive_explanatory(history, explanatory[kind])
            self.models[kind] = build_reserve_model(history, nu, cfg.bins)
        self.net_history = net_demand_history(**self.histories)
        self.deviation_dist = build_deviation_distribution(self.net_history)

    def generate(self) -> None:
        cfg = self.cfg
        self.scenario_set = generate_scenarios(self.forecast, cfg.scenario_count,
                                               cfg.copula(), cfg.seed,
                                               workers=cfg.workers)
        write_scenarios(self._emit("scenarios.csv"), self.scenario_set, cfg.copula())
        self.created.append(self.out_dir / "scenarios_meta.json")

    def moments(self) -> None:
        fm, sm, scores = validate_moments(self.forecast, self.scenario_set)
        write_moments_validation(self._emit("moments_validation.csv"),
                                 self.timestamps, fm, sm, scores)

    def run_methods(self) -> None:
        cfg = self.cfg
        solar_model = self.models["solar"]
        subsets = None
        for token in cfg.methods:
            if token == "deterministic":
                solar_det = method_deterministic(solar_model, self.futures["solar"], cfg.ci)
                result = MethodResult(method="deterministic",
                                      profile=self._grid(self._total(solar_det.profile, cfg.ci),
                                                         "deterministic", {"ci": cfg.ci}),
                                      provenance={"ci": cfg.ci})
            elif token == "all":
                part = method_all_scenarios(self.scenario_set, solar_model, cfg.ci)
                result = MethodResult(method=part.method,
                                      profile=self._grid(self._total(part.profile, cfg.ci),
                                                         part.method, part.profile.params),
                                      provenance=part.provenance)
            elif token in ("extreme", "bounds"):
                if subsets is None:
                    d = extreme_count(len(self.scenario_set), cfg.extreme_fraction)
                    subsets = select_extremes(self.scenario_set, d)
                if token == "extreme":
                    part = method_extreme_scenarios(subsets, solar_model, cfg.ci)
                else:
                    part = method_bounds(subsets, self.forecast)
                result = MethodResult(method=part.method,
                                      profile=self._grid(self._total(part.profile, cfg.ci),
                                                         part.method, part.profile.params),
                                      provenance=part.provenance)
            elif token == "pi":
                part = method_prediction_interval(self.forecast, cfg.pi)
                result = MethodResult(method=part.method,
                                      profile=self._grid(self._total(part.profile, cfg.ci),
                                                         part.method, part.profile.params),
                                      provenance=part.provenance)
            elif token == "risk":
                sized = size_to_risk(self.deviation_dist, cfg.risk_limit)
                profile = _hourly_to_grid(sized, self.timestamps,
                                          self.forecast.resolution_minutes,
                                          "risk-based", {"rho_limit": cfg.risk_limit})
                result = MethodResult(method="risk-based", profile=profile,
                                      provenance={"rho_limit": cfg.risk_limit})
            elif token == "hybrid":
                constituents = [r for t, r in self.results.items() if t != "hybrid"]
                if not constituents:
                    raise InputError("hybrid requires at least one other method")
                part = method_hybrid(constituents)
                result = MethodResult(method="hybrid",
                                      profile=self._grid(part.profile, "hybrid",
                                                         part.profile.params),
                                      provenance=part.provenance)
            self.results[token] = result
            write_reserves(self._emit(f"reserves_{token}.csv"), result.profile)

    def _grid(self, profile: ReserveProfile, method: str, params: dict) -> ReserveProfile:
        return ReserveProfile(r_up=profile.r_up, r_dn=profile.r_dn, method=method,
                              params=params, start=self.forecast.start,
                              resolution_minutes=self.forecast.resolution_minutes)

    def assess_risk(self) -> None:
        for token, result in self.results.items():
            risk = compute_risk(self.deviation_dist, result.profile)
            write_risk(self._emit(f"risk_{token}.csv"), risk, self.timestamps)

    def sensitivity(self) -> None:
        cfg = self.cfg
        recursive = {}
        for ci in SENSITIVITY_CIS:
            solar_det = method_deterministic(self.models["solar"], self.futures["solar"], ci)
            recursive[ci] = self._total(solar_det.profile, ci)
        anticipative = {}
        for pi in SENSITIVITY_PIS:
            part = method_prediction_interval(self.forecast, pi)
            anticipative[pi] = self._total(part.profile, cfg.ci)
        rows = []
        for t, ts in enumerate(self.timestamps):
            for ci in SENSITIVITY_CIS:
                for pi in SENSITIVITY_PIS:
                    rows.append({
                        "timestamp": ts, "ci": ci, "pi": pi,
                        "recursive_r_up_mw": recursive[ci].r_up[t],
                        "recursive_r_dn_mw": recursive[ci].r_dn[t],
                        "anticipative_r_up_mw": anticipative[pi].r_up[t],
                        "anticipative_r_dn_mw": anticipative[pi].r_dn[t],
                    })
        write_sensitivity(self._emit("sensitivity.csv"), rows)

    def write_manifest(self) -> RunManifest:
        manifest = RunManifest(
            config=self.cfg.to_dict(),
            input_hashes={p: file_sha256(p) for p in self.cfg.input_paths().values()},
            version=f"reservedim {VERSION}",
            seed=self.cfg.seed,
            timings=self.timings,
        )
        self._emit("manifest.json").write_text(manifest.to_json())
        return manifest

    def run(self) -> RunManifest:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with _output_lock(self.out_dir):
            try:
                with _stage("load-inputs", self.timings):
                    self.load_inputs()
                with _stage("reserve-models", self.timings):
                    self.build_models()
                if self._needs_scenarios():
                    with _stage("scenarios", self.timings):
                        self.generate()
                    with _stage("moments", self.timings):
                        self.moments()
                with _stage("methods", self.timings):
                    self.run_methods()
                with _stage("risk", self.timings):
                    self.assess_risk()
                with _stage("sensitivity", self.timings):
                    self.sensitivity()
                return self.write_manifest()
            except BaseException:
                for path in self.created:
                    Path(path).unlink(missing_ok=True)
                raise


def run_pipeline(cfg: RunConfig) -> RunManifest:
    """Run every configured stage, emitting result CSVs and manifest.json.

    Any stage error aborts with the stage name in the message and removes
    files already written to the output directory.
    """
    return _Pipeline(cfg).run()
