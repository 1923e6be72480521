"""CSV and JSON input/output.

All floats are written with ``repr`` so every output round-trips through
its loader bit-exactly. Timestamps are ISO-8601.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import InputError
from .forecast import IntervalCdf, ProbabilisticForecast, TimeSeries
from .reserves import HistoricalSeries, ReserveProfile
from .risk import RiskProfile
from .scenarios import Scenario, ScenarioSet, softmax_normalize

logger = logging.getLogger(__name__)


def _fmt(x: float) -> str:
    return repr(float(x))


def parse_timestamp(text: str, context: str) -> datetime:
    try:
        return datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise InputError(f"{context}: bad timestamp {text!r}") from exc


def _parse_float(text: str, context: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise InputError(f"{context}: bad number {text!r}") from exc


def _read_rows(path: str | Path, required: list[str]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise InputError(f"{path}: missing column {column!r}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if any(row.get(c) in (None, "") for c in required):
                raise InputError(f"{path}: malformed row at line {i}")
            row["_line"] = i
            rows.append(row)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def _infer_resolution(timestamps: list[datetime], default: int = 60) -> int:
    if len(timestamps) < 2:
        return default
    deltas = [(b - a).total_seconds() / 60.0 for a, b in zip(timestamps, timestamps[1:])]
    return int(round(min(deltas)))


def _check_timestamps(timestamps: list[datetime], path) -> None:
    for a, b in zip(timestamps, timestamps[1:]):
        if b == a:
            raise InputError(f"{path}: duplicate timestamp {a.isoformat()}")
        if b < a:
            raise InputError(f"{path}: timestamps not increasing at {b.isoformat()}")


def load_history(path: str | Path, kind: str,
                 resolution_minutes: int | None = None) -> HistoricalSeries:
    """Load a `timestamp,forecast_mw,actual_mw` history file."""
    rows = _read_rows(path, ["timestamp", "forecast_mw", "actual_mw"])
    timestamps = [parse_timestamp(r["timestamp"], f"{path} line {r['_line']}") for r in rows]
    _check_timestamps(timestamps, path)
    forecast = [_parse_float(r["forecast_mw"], f"{path} line {r['_line']}") for r in rows]
    actual = [_parse_float(r["actual_mw"], f"{path} line {r['_line']}") for r in rows]
    resolution = resolution_minutes or _infer_resolution(timestamps)
    return HistoricalSeries(kind=kind, timestamps=tuple(timestamps),
                            forecast=np.array(forecast), actual=np.array(actual),
                            resolution_minutes=resolution)


def level_column(level: float) -> str:
    return f"p{round(level * 100):02d}"


def load_forecast(path: str | Path, levels: list[float], kind: str = "solar") -> ProbabilisticForecast:
    """Load a `timestamp,central,p05,...` probabilistic forecast file.

    The probability columns must match ``levels`` exactly. Rows whose
    quantile values decrease raise a quantile-crossing error naming the
    columns; rows with all values equal become degenerate intervals.
    """
    levels = sorted(float(l) for l in levels)
    if any(not (0.0 < l < 1.0) for l in levels):
        raise InputError("quantile levels must lie strictly inside (0, 1)")
    columns = [level_column(l) for l in levels]
    rows = _read_rows(path, ["timestamp", "central", *columns])
    timestamps = [parse_timestamp(r["timestamp"], f"{path} line {r['_line']}") for r in rows]
    _check_timestamps(timestamps, path)
    steps = {(b - a) for a, b in zip(timestamps, timestamps[1:])}
    if len(steps) > 1:
        raise InputError(f"{path}: forecast grid is not uniform")
    resolution = _infer_resolution(timestamps)

    central = []
    intervals = []
    for r in rows:
        context = f"{path} line {r['_line']}"
        values = [_parse_float(r[c], context) for c in columns]
        for (ca, va), (cb, vb) in zip(zip(columns, values), zip(columns[1:], values[1:])):
            if vb < va:
                raise InputError(f"{context}: quantile crossing between {ca} and {cb}")
        central.append(_parse_float(r["central"], context))
        if max(values) == min(values):
            intervals.append(IntervalCdf.degenerate(values[0]))
        else:
            intervals.append(IntervalCdf(levels=np.array(levels), values=np.array(values)))

    series = TimeSeries(kind=kind, start=timestamps[0], resolution_minutes=resolution,
                        values=np.array(central))
    return ProbabilisticForecast(central=series, intervals=tuple(intervals),
                                 name=Path(path).stem)


def load_deterministic_forecast(path: str | Path, kind: str) -> TimeSeries:
    """Load a `timestamp,forecast_mw` single-trajectory forecast file."""
    rows = _read_rows(path, ["timestamp", "forecast_mw"])
    timestamps = [parse_timestamp(r["timestamp"], f"{path} line {r['_line']}") for r in rows]
    _check_timestamps(timestamps, path)
    values = [_parse_float(r["forecast_mw"], f"{path} line {r['_line']}") for r in rows]
    return TimeSeries(kind=kind, start=timestamps[0],
                      resolution_minutes=_infer_resolution(timestamps),
                      values=np.array(values))


def write_scenarios(path: str | Path, sset: ScenarioSet, params=None) -> None:
    """Write `scenario_id,probability,t0,...` plus a sidecar metadata JSON."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "probability"] + [f"t{t}" for t in range(sset.horizon)])
        for i, s in enumerate(sset.scenarios):
            writer.writerow([i, _fmt(s.probability)] + [_fmt(v) for v in s.values])
    meta = {
        "source_id": sset.source_id,
        "kind": sset.kind,
        "start": sset.start.isoformat(),
        "resolution_minutes": sset.resolution_minutes,
        "count": len(sset),
        "seed": sset.seed,
    }
    if params is not None:
        meta["copula"] = {"theta": params.theta, "omega": params.omega,
                          "jitter": params.jitter}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_meta.json")


def read_scenarios(path: str | Path) -> ScenarioSet:
    """Reload a scenario CSV written by :func:`write_scenarios`.

    Log weights are reconstructed as log(probability), which normalizes
    back to the same probabilities.
    """
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    rows = _read_rows(path, ["scenario_id", "probability"])
    if meta.get("count") not in (None, len(rows)):
        raise InputError(f"{path}: row count disagrees with sidecar metadata")
    columns = [c for c in rows[0] if c.startswith("t") and c[1:].isdigit()]
    columns.sort(key=lambda c: int(c[1:]))
    scenarios = []
    with np.errstate(divide="ignore"):
        for r in rows:
            prob = _parse_float(r["probability"], f"{path} line {r['_line']}")
            values = np.array([_parse_float(r[c], f"{path} line {r['_line']}") for c in columns])
            scenarios.append(Scenario(values=values, log_weight=float(np.log(prob)),
                                      probability=prob))
    return ScenarioSet(source_id=meta["source_id"], kind=meta["kind"],
                       start=datetime.fromisoformat(meta["start"]),
                       resolution_minutes=int(meta["resolution_minutes"]),
                       scenarios=tuple(scenarios), seed=int(meta["seed"]))


def write_reserves(path: str | Path, profile: ReserveProfile) -> None:
    """Write `timestamp,r_up_mw,r_dn_mw,method` for a gridded profile."""
    timestamps = profile.timestamps()
    if timestamps is None:
        raise InputError("profile has no time grid to write")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "r_up_mw", "r_dn_mw", "method"])
        for t, ts in enumerate(timestamps):
            writer.writerow([ts.isoformat(), _fmt(profile.r_up[t]),
                             _fmt(profile.r_dn[t]), profile.method])


def read_reserves(path: str | Path) -> ReserveProfile:
    rows = _read_rows(path, ["timestamp", "r_up_mw", "r_dn_mw", "method"])
    timestamps = [parse_timestamp(r["timestamp"], f"{path} line {r['_line']}") for r in rows]
    _check_timestamps(timestamps, path)
    r_up = [_parse_float(r["r_up_mw"], f"{path} line {r['_line']}") for r in rows]
    r_dn = [_parse_float(r["r_dn_mw"], f"{path} line {r['_line']}") for r in rows]
    return ReserveProfile(r_up=np.array(r_up), r_dn=np.array(r_dn),
                          method=rows[0]["method"], start=timestamps[0],
                          resolution_minutes=_infer_resolution(timestamps))


def write_risk(path: str | Path, risk_profile: RiskProfile,
               timestamps: list[datetime]) -> None:
    """Write `timestamp,rho_short,rho_long`."""
    if len(timestamps) != len(risk_profile):
        raise InputError("timestamps and risk profile lengths disagree")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "rho_short", "rho_long"])
        for t, ts in enumerate(timestamps):
            writer.writerow([ts.isoformat(), _fmt(risk_profile.rho_short[t]),
                             _fmt(risk_profile.rho_long[t])])


def read_risk(path: str | Path) -> RiskProfile:
    rows = _read_rows(path, ["timestamp", "rho_short", "rho_long"])
    rho_short = [_parse_float(r["rho_short"], f"{path} line {r['_line']}") for r in rows]
    rho_long = [_parse_float(r["rho_long"], f"{path} line {r['_line']}") for r in rows]
    return RiskProfile(rho_short=np.array(rho_short), rho_long=np.array(rho_long))


MOMENT_NAMES = ("mean", "variance", "skewness", "kurtosis_excess")


def write_moments_validation(path: str | Path, timestamps: list[datetime],
                             forecast_m, scenario_m, nrmse_pct: dict) -> None:
    """Per-interval forecast vs scenario moments plus constant %NRMSE columns."""
    header = ["timestamp"]
    header += [f"forecast_{m}" for m in MOMENT_NAMES]
    header += [f"scenario_{m}" for m in MOMENT_NAMES]
    header += ["defined"]
    header += [f"nrmse_pct_{m}" for m in MOMENT_NAMES]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, ts in enumerate(timestamps):
            row = [ts.isoformat()]
            for series in (forecast_m, scenario_m):
                row += [_fmt(getattr(series, m)[t]) for m in MOMENT_NAMES]
            row.append(str(bool(forecast_m.defined[t] and scenario_m.defined[t])))
            row += [_fmt(nrmse_pct[m]) for m in MOMENT_NAMES]
            writer.writerow(row)


def read_moments_validation(path: str | Path) -> dict:
    rows = _read_rows(path, ["timestamp", "forecast_mean", "scenario_mean",
                             "nrmse_pct_mean"])
    out = {"timestamps": [parse_timestamp(r["timestamp"], path) for r in rows]}
    for prefix in ("forecast", "scenario"):
        for m in MOMENT_NAMES:
            out[f"{prefix}_{m}"] = np.array([float(r[f"{prefix}_{m}"]) for r in rows])
    out["defined"] = np.array([r["defined"] == "True" for r in rows])
    out["nrmse_pct"] = {m: float(rows[0][f"nrmse_pct_{m}"]) for m in MOMENT_NAMES}
    return out


def write_sensitivity(path: str | Path, rows: list[dict]) -> None:
    """Write `timestamp,ci,pi,...` sweep rows."""
    columns = ["timestamp", "ci", "pi", "recursive_r_up_mw", "recursive_r_dn_mw",
               "anticipative_r_up_mw", "anticipative_r_dn_mw"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row["timestamp"].isoformat()] + [_fmt(row[c]) for c in columns[1:]])


def read_sensitivity(path: str | Path) -> list[dict]:
    rows = _read_rows(path, ["timestamp", "ci", "pi", "recursive_r_up_mw",
                             "recursive_r_dn_mw", "anticipative_r_up_mw",
                             "anticipative_r_dn_mw"])
    out = []
    for r in rows:
        out.append({
            "timestamp": parse_timestamp(r["timestamp"], path),
            **{k: float(r[k]) for k in ("ci", "pi", "recursive_r_up_mw",
                                        "recursive_r_dn_mw", "anticipative_r_up_mw",
                                        "anticipative_r_dn_mw")},
        })
    return out


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
