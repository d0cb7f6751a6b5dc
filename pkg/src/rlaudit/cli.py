"""Command-line entry point: ``rlaudit {synth,fit,score,study}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from .bayes import fit_reward_model
from .core import DataQualityError
from .generative import AlgorithmConfig, replay_observed
from .interestingness import ScoreConfig, score_stream
from .io import (
    AppConfig,
    ConfigError,
    IngestError,
    config_hash,
    dump_json,
    ensure_dir,
    load_config,
    read_coefficients,
    read_scores,
    read_trajectories,
    to_jsonable,
    write_coefficients,
    write_scores,
    write_study_bundle,
    write_trajectories,
)
from .study import parse_ground_truth, run_study
from .synth import generate_trial

log = logging.getLogger("rlaudit")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str) -> tuple:
    """'0.35,0.4,0.45:0.65,0.7,0.75' -> (deltas, gammas)."""
    if ":" not in text:
        raise argparse.ArgumentTypeError("grid must look like DELTAS:GAMMAS, e.g. 0.35,0.4:0.7,0.75")
    deltas, gammas = text.split(":", 1)
    return _floats(deltas), _floats(gammas)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--delta", type=float)
    scoring.add_argument("--gamma", type=float)
    scoring.add_argument("--kind", choices=("type1", "type2"))
    scoring.add_argument("--feature", help="binary feature for type-2 scores")

    parser = argparse.ArgumentParser(prog="rlaudit", description="Resampling audits of online RL trials.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic trial")
    p.add_argument("--n-users", type=int)
    p.add_argument("--T", type=int)

    p = sub.add_parser("fit", parents=[common], help="fit per-user reward models")
    p.add_argument("trajectories", type=Path)

    p = sub.add_parser("score", parents=[common, scoring], help="score observed trajectories")
    p.add_argument("trajectories", type=Path)

    p = sub.add_parser("study", parents=[common, scoring], help="run a resampling study")
    p.add_argument("trajectories", type=Path)
    p.add_argument("--ground-truth", help="null-advantage or null-feature:<name>")
    p.add_argument("--B", type=int, help="resamples per user")
    p.add_argument("--workers", type=int)
    p.add_argument("--grid", type=_grid, help="DELTAS:GAMMAS for the stability grid")
    p.add_argument("--coefficients", type=Path, help="coefficients.json from 'fit'")
    p.add_argument("--observed-scores", type=Path, help="scores.csv from 'score'")
    p.add_argument("--score-matrix", action="store_true", help="also write per-resample scores")
    return parser


def _effective_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else AppConfig()
    study, synth = cfg.study, cfg.synth
    score_kw = {}
    for name in ("delta", "gamma", "kind", "feature"):
        value = getattr(args, name, None)
        if value is not None:
            score_kw[name] = value
    if score_kw.get("kind") == "type1":
        score_kw.setdefault("feature", None)
    study_kw = {}
    if args.seed is not None:
        study_kw["master_seed"] = args.seed
        synth = dataclasses.replace(synth, seed=args.seed)
    for name, attr in (("ground_truth", "ground_truth"), ("B", "B"), ("workers", "workers")):
        value = getattr(args, attr, None)
        if value is not None:
            study_kw[name] = value
    if getattr(args, "grid", None) is not None:
        study_kw["delta_grid"], study_kw["gamma_grid"] = args.grid
    for name in ("n_users", "T"):
        value = getattr(args, name, None)
        if value is not None:
            synth = dataclasses.replace(synth, **{name: value})
    try:
        if score_kw:
            study_kw["score"] = dataclasses.replace(study.score, **score_kw)
        if "ground_truth" in study_kw:
            parse_ground_truth(study_kw["ground_truth"])
        study = dataclasses.replace(study, **study_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return dataclasses.replace(cfg, study=study, synth=synth)


def _header(cfg: AppConfig, seed: int) -> dict:
    return {"master_seed": seed, "config_sha256": config_hash(cfg), "tool": "rlaudit"}


def cmd_synth(args, cfg: AppConfig) -> int:
    out = ensure_dir(args.out_dir)
    users = generate_trial(cfg.synth, cfg.prior.build())
    header = _header(cfg, cfg.synth.seed)
    write_trajectories(out / "trajectories.csv", users, [f"{k}={v}" for k, v in sorted(header.items())])
    dump_json(out / "trajectories.manifest.json", {**header, "synth": to_jsonable(cfg.synth),
                                                   "n_users": len(users)})
    log.info("wrote %d users to %s", len(users), out / "trajectories.csv")
    return EXIT_OK


def cmd_fit(args, cfg: AppConfig) -> int:
    out = ensure_dir(args.out_dir)
    users = read_trajectories(args.trajectories, cfg.standardization)
    prior = cfg.prior.build()
    fits, failures = {}, []
    for u in users:
        try:
            fits[u.user_id] = fit_reward_model(u, prior, cfg.study.sigma2)
        except ValueError as exc:
            failures.append({"user_id": u.user_id, "stage": "fit", "reason": str(exc)})
    write_coefficients(out / "coefficients.json", fits)
    dump_json(out / "fit_failures.json", failures)
    return EXIT_OK


def cmd_score(args, cfg: AppConfig) -> int:
    out = ensure_dir(args.out_dir)
    users = read_trajectories(args.trajectories, cfg.standardization)
    prior = cfg.prior.build()
    score: ScoreConfig = cfg.study.score
    results = []
    for u in users:
        counterfactual = None
        adv = u.advantage
        need_cf = score.smoothing == "raw" and score.kind == "type2"
        if adv is None or need_cf:
            sigma2 = cfg.study.sigma2 or 1.0
            algo = AlgorithmConfig(prior, sigma2, warmup_days=cfg.study.warmup_days,
                                   warmup_prob=cfg.study.warmup_prob)
            batch = replay_observed(u, algo, counterfactual=(score.feature,) if need_cf else ())
            adv = batch.advantage[0] if adv is None else adv
            if need_cf:
                counterfactual = tuple(x[0] for x in batch.counterfactual[score.feature])
        values = u.feature_values(score.feature) if score.kind == "type2" else None
        results.append(score_stream(u.user_id, adv, u.available_array, u.posterior_update_log, score,
                                    values, counterfactual))
    header = _header(cfg, cfg.study.master_seed)
    write_scores(out / "scores.csv", results, [f"{k}={v}" for k, v in sorted(header.items())])
    return EXIT_OK


def cmd_study(args, cfg: AppConfig) -> int:
    out = ensure_dir(args.out_dir)
    users = read_trajectories(args.trajectories, cfg.standardization)
    fits = read_coefficients(args.coefficients) if args.coefficients else None
    observed = read_scores(args.observed_scores) if args.observed_scores else None
    start = time.perf_counter()
    result = run_study(users, cfg.study, cfg.prior.build(), fits=fits, observed=observed)
    log.info("study finished in %.1f s", time.perf_counter() - start)
    write_study_bundle(out, result, _header(cfg, cfg.study.master_seed), score_matrix=args.score_matrix)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "score": cmd_score, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, IngestError, DataQualityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
