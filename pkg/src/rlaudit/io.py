"""CSV ingestion/export, config loading and result bundles.

Floats are written with ``repr`` (shortest round-trip form) and nothing
time- or host-dependent goes into an output, so bundles are byte-stable.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .bayes import MU_ALPHA0, MU_BETA, SIGMA_ALPHA0, SIGMA_BETA, Prior, RewardFit
from .core import (
    CONTINUOUS_FEATURES,
    ContextFeatures,
    DataQualityError,
    DecisionPoint,
    Trajectory,
    build_trajectory,
    day_of,
)
from .interestingness import ScoreConfig, interesting_flags
from .study import StudyConfig, StudyResult
from .synth import SynthSpec

COLUMNS = ("user_id", "t", "day", "available", "engagement", "variation", "location", "temperature",
           "prior30", "yesterday", "antised", "dosage", "action", "prob", "reward", "missing")
OPTIONAL_COLUMNS = ("advantage", "updated")
QUANTILES = (0.05, 0.5, 0.95)


class IngestError(ValueError):
    """Collects every located problem found while reading a file."""

    def __init__(self, path, problems: list):
        self.path = str(path)
        self.problems = problems
        lines = "\n".join(f"  {self.path}:{loc}: {msg}" for loc, msg in problems[:50])
        more = f"\n  ... {len(problems) - 50} more" if len(problems) > 50 else ""
        super().__init__(f"{len(problems)} problem(s) in {self.path}:\n{lines}{more}")


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


# ---------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class Standardization:
    """(x - shift) / scale applied to continuous context columns on ingestion."""

    shift: dict = field(default_factory=dict)
    scale: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in list(self.shift) + list(self.scale):
            if key not in CONTINUOUS_FEATURES:
                raise ConfigError(f"standardization: unknown feature {key!r}")
        for key, s in self.scale.items():
            if not s > 0:
                raise ConfigError(f"standardization.scale.{key}: must be positive")

    def apply(self, name: str, value: float) -> float:
        return (value - self.shift.get(name, 0.0)) / self.scale.get(name, 1.0)


def _parse(kind, raw: str, name: str):
    raw = raw.strip()
    if kind == "int01":
        if raw not in ("0", "1"):
            raise ValueError(f"{name} must be 0 or 1, got {raw!r}")
        return int(raw)
    if kind == "opt_float":
        if raw == "":
            return None
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"{name} is not finite: {raw!r}")
        return value
    if kind == "float":
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"{name} is not finite: {raw!r}")
        return value
    if kind == "int":
        return int(raw)
    raise AssertionError(kind)


def _data_lines(handle):
    for lineno, line in enumerate(handle, start=1):
        if line.startswith("#") or not line.strip():
            continue
        yield lineno, line


def read_trajectories(path, standardization: Optional[Standardization] = None) -> list[Trajectory]:
    """Read a long-format trajectory CSV, one row per (user, t).

    Blank dosage on every row of a user means "recompute from actions"; a
    blank reward is a missing observation.
    """
    std = standardization or Standardization()
    problems = []
    rows_by_user: dict = {}
    with open(path, newline="") as handle:
        lines = list(_data_lines(handle))
    if not lines:
        raise IngestError(path, [(1, "no header row")])
    header_line, header = lines[0][0], next(csv.reader([lines[0][1]]))
    header = [h.strip() for h in header]
    missing_cols = [c for c in COLUMNS if c not in header]
    unknown = [c for c in header if c not in COLUMNS + OPTIONAL_COLUMNS]
    if missing_cols or unknown:
        msg = []
        if missing_cols:
            msg.append(f"missing column(s) {', '.join(missing_cols)}")
        if unknown:
            msg.append(f"unknown column(s) {', '.join(unknown)}")
        raise IngestError(path, [(header_line, "; ".join(msg))])

    for lineno, line in lines[1:]:
        values = next(csv.reader([line]))
        if len(values) != len(header):
            problems.append((lineno, f"expected {len(header)} fields, got {len(values)}"))
            continue
        rec = dict(zip(header, values))
        try:
            t = _parse("int", rec["t"], "t")
            day = _parse("int", rec["day"], "day")
            if day != day_of(t):
                raise ValueError(f"day {day} does not match t={t} (expected {day_of(t)})")
            ctx = ContextFeatures(
                engagement=_parse("int01", rec["engagement"], "engagement"),
                variation=_parse("int01", rec["variation"], "variation"),
                location=_parse("int01", rec["location"], "location"),
                temperature=std.apply("temperature", _parse("float", rec["temperature"], "temperature")),
                prior_30min_steps=std.apply("prior30", _parse("float", rec["prior30"], "prior30")),
                yesterday_steps=std.apply("yesterday", _parse("float", rec["yesterday"], "yesterday")),
            )
            row = dict(
                t=t,
                available=_parse("int01", rec["available"], "available"),
                context=ctx,
                anti_sedentary=_parse("int01", rec["antised"], "antised"),
                dosage=_parse("opt_float", rec["dosage"], "dosage"),
                action=_parse("int01", rec["action"], "action"),
                action_prob=_parse("opt_float", rec["prob"], "prob"),
                reward=_parse("opt_float", rec["reward"], "reward"),
                missing=bool(_parse("int01", rec["missing"], "missing")),
                advantage=_parse("opt_float", rec.get("advantage", ""), "advantage"),
                updated=None if rec.get("updated", "").strip() == "" else _parse("int01", rec["updated"], "updated"),
            )
            if row["available"] == 0 and row["action"] == 1:
                raise ValueError("action=1 while unavailable")
            if row["action_prob"] is not None and not 0.0 <= row["action_prob"] <= 1.0:
                raise ValueError(f"prob {row['action_prob']} outside [0, 1]")
        except (ValueError, DataQualityError) as exc:
            problems.append((lineno, str(exc)))
            continue
        user = rec["user_id"].strip()
        if not user:
            problems.append((lineno, "empty user_id"))
            continue
        rows_by_user.setdefault(user, []).append((lineno, row))
    if problems:
        raise IngestError(path, problems)

    out = []
    for user, rows in rows_by_user.items():
        try:
            out.append(_assemble(user, rows))
        except DataQualityError as exc:
            problems.append((rows[0][0], str(exc)))
    if problems:
        raise IngestError(path, problems)
    return out


def _assemble(user: str, rows: list) -> Trajectory:
    rows = sorted(rows, key=lambda r: r[1]["t"])
    for expected, (lineno, row) in enumerate(rows, start=1):
        if row["t"] != expected:
            raise DataQualityError(f"user {user}: decision times not contiguous "
                                   f"(expected t={expected}, got t={row['t']} at line {lineno})")
    dosages = [r["dosage"] for _, r in rows]
    if all(d is None for d in dosages):
        traj = build_trajectory(user, [r for _, r in rows])
        points = traj.points
    elif any(d is None for d in dosages):
        raise DataQualityError(f"user {user}: dosage is blank on some rows but not all")
    else:
        points = tuple(DecisionPoint(r["t"], r["available"], r["context"], r["anti_sedentary"], r["dosage"],
                                     r["action"], r["action_prob"], r["reward"], r["missing"]) for _, r in rows)
    adv = [r["advantage"] for _, r in rows]
    if any(a is None for a in adv):
        if not all(a is None for a in adv):
            raise DataQualityError(f"user {user}: advantage is blank on some rows but not all")
        adv = None
    log = None
    flags = [r["updated"] for _, r in rows]
    if any(f is not None for f in flags):
        by_day: dict = {}
        for (lineno, r), flag in zip(rows, flags):
            if flag is None:
                continue
            prev = by_day.setdefault(day_of(r["t"]), flag)
            if prev != flag:
                raise DataQualityError(f"user {user}: line {lineno}: inconsistent 'updated' within day {day_of(r['t'])}")
        n = day_of(len(rows))
        log = tuple(bool(by_day.get(d, 0)) for d in range(1, n + 1))
    return Trajectory(user, points, log, None if adv is None else tuple(adv))


def write_trajectories(path, trajectories: Sequence[Trajectory], comments: Sequence[str] = (),
                       include_updates: bool = True) -> None:
    with_adv = any(t.advantage is not None for t in trajectories)
    header = list(COLUMNS) + (["advantage"] if with_adv else []) + (["updated"] if include_updates else [])
    with open(path, "w", newline="") as handle:
        for c in comments:
            handle.write(f"# {c}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for traj in trajectories:
            for i, p in enumerate(traj.points):
                c = p.context
                row = [traj.user_id, p.t, p.day, p.available, c.engagement, c.variation, c.location,
                       c.temperature, c.prior_30min_steps, c.yesterday_steps, p.anti_sedentary, p.dosage,
                       p.action or 0, p.action_prob, p.reward, p.missing]
                if with_adv:
                    row.append(None if traj.advantage is None else traj.advantage[i])
                if include_updates:
                    row.append(traj.posterior_update_log[p.day - 1])
                writer.writerow([r if isinstance(r, str) else fmt(r) for r in row])


# ---------------------------------------------------------------------- config

@dataclass(frozen=True)
class PriorConfig:
    mu_alpha0: tuple = MU_ALPHA0
    mu_beta: tuple = MU_BETA
    sigma_alpha0: tuple = SIGMA_ALPHA0
    sigma_beta: tuple = SIGMA_BETA

    def build(self) -> Prior:
        return Prior(np.array(self.mu_alpha0), np.array(self.mu_beta),
                     np.array(self.sigma_alpha0), np.array(self.sigma_beta))


@dataclass(frozen=True)
class AppConfig:
    study: StudyConfig = field(default_factory=StudyConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    standardization: Standardization = field(default_factory=Standardization)


_NESTED = {"study": StudyConfig, "score": ScoreConfig, "prior": PriorConfig, "synth": SynthSpec,
           "standardization": Standardization}


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        out = []
        for i, v in enumerate(value):
            if isinstance(v, (list, tuple)):
                out.append(tuple(_coerce(x, 0.0, f"{where}[{i}]") for x in v))
            else:
                out.append(_coerce(v, 0.0, f"{where}[{i}]"))
        return tuple(out)
    if isinstance(default, str) or default is None:
        if value is not None and not isinstance(value, (str, int, float)):
            raise ConfigError(f"{where}: unexpected value {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
        return {k: _coerce(v, 0.0, f"{where}.{k}") for k, v in value.items()}
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        sub = f"{where}.{name}"
        if name in _NESTED and dataclasses.is_dataclass(getattr(defaults, name)):
            kwargs[name] = _build(_NESTED[name], value, sub)
        else:
            kwargs[name] = _coerce(value, getattr(defaults, name), sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: Optional[dict]) -> AppConfig:
    return _build(AppConfig, data or {}, "config")


def load_config(path) -> AppConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from None
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def to_jsonable(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    if callable(obj):
        return getattr(obj, "__name__", repr(obj))
    return obj


# scheduling knobs that must not change any output byte
NON_SEMANTIC_KEYS = ("workers",)


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k not in NON_SEMANTIC_KEYS}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def semantic_view(obj) -> Any:
    """JSON form of a config without the scheduling-only fields."""
    return _strip(to_jsonable(obj))


def config_hash(obj) -> str:
    blob = json.dumps(semantic_view(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_json(path, obj) -> None:
    with open(path, "w") as handle:
        json.dump(to_jsonable(obj), handle, indent=2, sort_keys=True)
        handle.write("\n")


# ------------------------------------------------------------- fits and scores

def write_coefficients(path, fits: dict) -> None:
    dump_json(path, {"users": {uid: {"alpha": f.alpha, "beta": f.beta, "sigma2": f.sigma2, "n_used": f.n_used,
                                     "residual_mean": f.residual_mean, "residual_sd": f.residual_sd}
                               for uid, f in fits.items()}})


def read_coefficients(path) -> dict:
    data = json.loads(Path(path).read_text())
    out = {}
    try:
        for uid, rec in data["users"].items():
            out[uid] = RewardFit(np.array(rec["alpha"], dtype=float), np.array(rec["beta"], dtype=float),
                                 float(rec["sigma2"]), int(rec["n_used"]),
                                 float(rec.get("residual_mean", 0.0)), float(rec.get("residual_sd", 0.0)))
            if out[uid].alpha.shape != (8,) or out[uid].beta.shape != (5,):
                raise ValueError(f"user {uid}: alpha needs 8 entries and beta 5")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed coefficients: {exc}") from None
    return out


SCORE_COLUMNS = ("user_id", "score", "eligible", "good_days", "n_days", "interesting",
                 "interesting_plus", "interesting_minus")


def write_scores(path, results: Sequence, comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as handle:
        for c in comments:
            handle.write(f"# {c}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for r in results:
            writer.writerow([r.user_id, fmt(r.score), fmt(r.eligible), fmt(r.good_day_count), fmt(r.n_days),
                             fmt(r.interesting), fmt(r.interesting_plus), fmt(r.interesting_minus)])


def read_scores(path) -> dict:
    """user_id -> (score or NaN, good-day count), as consumed by run_study."""
    out = {}
    with open(path, newline="") as handle:
        lines = list(_data_lines(handle))
    if not lines:
        raise IngestError(path, [(1, "no header row")])
    header = next(csv.reader([lines[0][1]]))
    problems = []
    for lineno, line in lines[1:]:
        rec = dict(zip(header, next(csv.reader([line]))))
        try:
            score = float(rec["score"]) if rec["score"].strip() else math.nan
            out[rec["user_id"]] = (score, int(rec["good_days"]))
        except (KeyError, ValueError) as exc:
            problems.append((lineno, f"bad score row: {exc}"))
    if problems:
        raise IngestError(path, problems)
    return out


# ----------------------------------------------------------------- study bundle

def write_study_bundle(out_dir, result: StudyResult, header: dict, score_matrix: bool = False) -> list[str]:
    """Write users/trials/grid CSVs plus summary and failure JSON; returns file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comments = [f"{k}={v}" for k, v in sorted(header.items())]
    cfg = result.config
    cell = result.counts()
    obs_el, _ = result.eligibility()
    lvals = result.lvals()
    written = []

    def csv_file(name, columns, rows):
        with open(out / name, "w", newline="") as handle:
            for c in comments:
                handle.write(f"# {c}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([r if isinstance(r, str) else fmt(r) for r in row])
        written.append(name)

    _, res_el = result.eligibility()
    user_rows = []
    for i, o in enumerate(result.outcomes):
        el = bool(obs_el[i])
        flags = [bool(f) if el else None for f in interesting_flags(o.observed_score, cfg.score.delta)]
        kept = o.resample_scores[res_el[i]]
        quantiles = np.quantile(kept, QUANTILES).tolist() if kept.size else [None] * len(QUANTILES)
        user_rows.append([o.user_id, o.n_days, o.observed_good, el, o.observed_score if el else None, *flags,
                          lvals.get(o.user_id), int(res_el[i].sum()), *quantiles,
                          None if o.fit is None else o.fit.sigma2])
    csv_file("users.csv", ("user_id", "n_days", "good_days", "eligible", "score", "interesting",
                           "interesting_plus", "interesting_minus", "lval", "n_resamples_eligible",
                           *(f"resample_q{int(q * 100):02d}" for q in QUANTILES), "sigma2"), user_rows)

    csv_file("trials.csv", ("trial", "numint", "numint_plus", "numint_minus"),
             [[b, *cell.trials[:, b]] for b in range(cfg.B)])

    grid_rows = []
    for c in result.grid():
        grid_rows.append([c.delta, c.gamma, c.n_eligible, *c.observed,
                          c.percentile(0), c.percentile(1), c.percentile(2), *c.trials.mean(axis=1)])
    csv_file("grid.csv", ("delta", "gamma", "n_eligible", "numint", "numint_plus", "numint_minus",
                          "percentile", "percentile_plus", "percentile_minus", "trial_mean",
                          "trial_mean_plus", "trial_mean_minus"), grid_rows)

    if score_matrix:
        csv_file("resample_scores.csv", ("user_id", "resample", "score", "good_days"),
                 [[o.user_id, b, o.resample_scores[b], o.resample_good[b]]
                  for o in result.outcomes for b in range(cfg.B)])

    dump_json(out / "failures.json", [dataclasses.asdict(f) for f in result.failures])
    written.append("failures.json")
    summary = {
        **header,
        "config": semantic_view(cfg),
        "n_users": len(result.outcomes),
        "n_failed": len(result.failures),
        "n_eligible": cell.n_eligible,
        "observed": {"numint": cell.observed[0], "numint_plus": cell.observed[1], "numint_minus": cell.observed[2]},
        "count_percentile": {"numint": cell.percentile(0), "numint_plus": cell.percentile(1),
                             "numint_minus": cell.percentile(2)},
        "eligibility_mismatches": result.eligibility_mismatches(),
        "uniforms_drawn": result.uniforms_drawn,
    }
    dump_json(out / "summary.json", summary)
    written.append("summary.json")
    return written


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
