"""Resampling studies: are observed interestingness counts explained by chance?

For every user the reward model is fitted, a null ground truth is built from
the fit, and B trajectories are resampled under it. Per-resample scores and
good-day counts are kept, so any (delta, gamma) cell can be re-scored after
the fact without drawing another random number.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bayes import Prior, RewardFit, fit_reward_model, make_default_prior
from .core import Trajectory
from .generative import (
    NULL_FEATURES,
    AlgorithmConfig,
    make_null_advantage_model,
    make_null_feature_model,
    parasim_batch,
    replay_observed,
)
from .interestingness import (
    EPS,
    ScoreConfig,
    good_days,
    interesting_flags,
    is_eligible,
    smoothed_scores,
)
from .policy import ThresholdPolicy
from .rng import action_tape, resample_stream

log = logging.getLogger(__name__)

DELTA_GRID = (0.35, 0.40, 0.45)
GAMMA_GRID = (0.65, 0.70, 0.75)


def parse_ground_truth(spec: str) -> tuple[str, Optional[str]]:
    """'null_advantage' or 'null_feature:<name>' (hyphens accepted)."""
    kind, _, feature = spec.replace("-", "_").partition(":")
    if kind == "null_advantage" and not feature:
        return kind, None
    if kind == "null_feature" and feature in NULL_FEATURES:
        return kind, feature
    raise ValueError(f"unknown ground truth {spec!r}; expected null_advantage or "
                     f"null_feature:<one of {', '.join(NULL_FEATURES)}>")


@dataclass(frozen=True)
class StudyConfig:
    ground_truth: str = "null_advantage"
    B: int = 500
    master_seed: int = 0
    score: ScoreConfig = field(default_factory=ScoreConfig)
    delta_grid: tuple = DELTA_GRID
    gamma_grid: tuple = GAMMA_GRID
    workers: int = 1
    # noise variance for fitting and for the resampled algorithm; None estimates it per user
    sigma2: Optional[float] = None
    warmup_days: int = 7
    warmup_prob: float = 0.25
    # resamples advanced together; fixed so results never depend on scheduling
    chunk_size: int = 100

    def __post_init__(self):
        parse_ground_truth(self.ground_truth)
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be positive")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.score.smoothing != "smoothed":
            raise ValueError("studies score smoothed interestingness")
        for d in self.delta_grid:
            if not 0.0 < d < 0.5:
                raise ValueError(f"delta grid value {d} outside (0, 0.5)")
        for g in self.gamma_grid:
            if not 0.0 < g < 1.0:
                raise ValueError(f"gamma grid value {g} outside (0, 1)")


@dataclass
class UserOutcome:
    user_id: str
    index: int
    n_days: int
    observed_score: float  # NaN when no day is good
    observed_good: int
    resample_scores: np.ndarray  # (B,), NaN when no day is good
    resample_good: np.ndarray  # (B,)
    fit: Optional[RewardFit] = None
    uniforms_drawn: int = 0


@dataclass(frozen=True)
class UserFailure:
    user_id: str
    stage: str
    reason: str


def user_lval(observed_score: float, resample_scores, resample_eligible=None) -> float:
    """Share of eligible resamples at least as extreme (about 0.5) as the observed score."""
    scores = np.asarray(resample_scores, dtype=float)
    mask = np.isfinite(scores)
    if resample_eligible is not None:
        mask &= np.asarray(resample_eligible, dtype=bool)
    if not mask.any():
        raise ValueError("no eligible resamples to compare against")
    obs = abs(observed_score - 0.5)
    return float(np.mean(obs <= np.abs(scores[mask] - 0.5) + EPS))


def count_percentile(observed: float, trial_counts) -> float:
    """Fraction of trials whose count is at least the observed count."""
    counts = np.asarray(trial_counts, dtype=float)
    if counts.size == 0:
        raise ValueError("no trials")
    return float(np.mean(observed <= counts))


def _feature_values(traj: Trajectory, score: ScoreConfig):
    return traj.feature_values(score.feature) if score.kind == "type2" else None


def _observed_forecasts(traj: Trajectory, algo: AlgorithmConfig) -> np.ndarray:
    if traj.advantage is not None:
        return np.asarray(traj.advantage, dtype=float)
    return replay_observed(traj, algo).advantage[0]


def audit_user(index: int, traj: Trajectory, config: StudyConfig, prior: Prior,
               fit: Optional[RewardFit] = None, observed: Optional[tuple] = None) -> UserOutcome:
    """Fit, build the null model and score B resamples of one user.

    ``observed`` may supply (score, good_day_count) computed elsewhere;
    otherwise the trajectory's recorded forecasts (or a replay) are scored.
    """
    kind, feature = parse_ground_truth(config.ground_truth)
    values = _feature_values(traj, config.score)
    fit = fit or fit_reward_model(traj, prior, config.sigma2)
    sigma2 = fit.sigma2 if config.sigma2 is None else config.sigma2
    algo_kw = dict(sigma2=sigma2, threshold=ThresholdPolicy(), warmup_days=config.warmup_days,
                   warmup_prob=config.warmup_prob)
    if kind == "null_advantage":
        model = make_null_advantage_model(traj, fit, prior, **algo_kw)
    else:
        model = make_null_feature_model(traj, fit, prior, feature, **algo_kw)

    if observed is None:
        adv = _observed_forecasts(traj, model.algorithm)
        obs_score, obs_good = smoothed_scores(adv, traj.available_array, traj.posterior_update_log,
                                              config.score.kind, values)
        observed = (float(obs_score), int(obs_good.sum()))
    obs_score, obs_good = observed

    T, B = traj.T, config.B
    scores = np.empty(B)
    good = np.empty(B, dtype=int)
    for lo in range(0, B, config.chunk_size):
        hi = min(lo + config.chunk_size, B)
        tapes = np.stack([action_tape(resample_stream(config.master_seed, index, b), T) for b in range(lo, hi)])
        batch = parasim_batch(model, tapes)
        s, g = smoothed_scores(batch.advantage, traj.available_array, batch.update_log,
                               config.score.kind, values)
        scores[lo:hi] = s
        good[lo:hi] = int(g.sum())
    return UserOutcome(traj.user_id, index, traj.D, float(obs_score) if obs_score is not None else np.nan,
                       int(obs_good), scores, good, fit, B * T)


def _never_good(traj: Trajectory, score: ScoreConfig) -> bool:
    # good days depend only on exogenous quantities, so the observed count holds for every resample
    return not good_days(traj.available_array, traj.posterior_update_log, score.kind,
                         _feature_values(traj, score)).any()


def _audit_job(args):
    index, traj, config, prior, fit, observed = args
    # failures are recorded per user; the study carries on without them
    if fit is None:
        if observed is None and _never_good(traj, config.score):
            return UserOutcome(traj.user_id, index, traj.D, np.nan, 0,
                               np.full(config.B, np.nan), np.zeros(config.B, dtype=int))
        try:
            fit = fit_reward_model(traj, prior, config.sigma2)
        except Exception as exc:
            return UserFailure(traj.user_id, "fit", f"{type(exc).__name__}: {exc}")
    try:
        return audit_user(index, traj, config, prior, fit, observed)
    except Exception as exc:
        return UserFailure(traj.user_id, "resample", f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class CellCounts:
    """Counts of interesting users at one (delta, gamma) cell."""

    delta: float
    gamma: float
    observed: tuple  # (numint, plus, minus)
    trials: np.ndarray  # (3, B)
    n_eligible: int

    def percentile(self, which: int = 0) -> float:
        return count_percentile(self.observed[which], self.trials[which])


@dataclass
class StudyResult:
    config: StudyConfig
    outcomes: list
    failures: list = field(default_factory=list)

    @property
    def user_ids(self) -> list:
        return [o.user_id for o in self.outcomes]

    @property
    def uniforms_drawn(self) -> int:
        return sum(o.uniforms_drawn for o in self.outcomes)

    def _arrays(self):
        B = self.config.B
        n = len(self.outcomes)
        scores = np.array([o.resample_scores for o in self.outcomes]).reshape(n, B)
        good = np.array([o.resample_good for o in self.outcomes]).reshape(n, B)
        days = np.array([o.n_days for o in self.outcomes])
        obs = np.array([o.observed_score for o in self.outcomes])
        obs_good = np.array([o.observed_good for o in self.outcomes])
        return scores, good, days, obs, obs_good

    def eligibility(self, gamma: Optional[float] = None):
        """(observed (n,), resampled (n, B)) eligibility flags."""
        gamma = self.config.score.gamma if gamma is None else gamma
        scores, good, days, obs, obs_good = self._arrays()
        obs_el = is_eligible(obs_good, days, gamma) & (obs_good > 0) & np.isfinite(obs)
        res_el = is_eligible(good, days[:, None], gamma) & (good > 0) & np.isfinite(scores)
        return obs_el, res_el

    def counts(self, delta: Optional[float] = None, gamma: Optional[float] = None) -> CellCounts:
        delta = self.config.score.delta if delta is None else delta
        gamma = self.config.score.gamma if gamma is None else gamma
        scores, _, _, obs, _ = self._arrays()
        obs_el, res_el = self.eligibility(gamma)
        flags_obs = [f & obs_el for f in interesting_flags(obs, delta)]
        flags_res = [f & res_el for f in interesting_flags(scores, delta)]
        observed = tuple(int(f.sum()) for f in flags_obs)
        trials = np.array([f.sum(axis=0) for f in flags_res]).reshape(3, self.config.B)
        return CellCounts(delta, gamma, observed, trials, int(obs_el.sum()))

    def grid(self, deltas: Optional[Sequence[float]] = None,
             gammas: Optional[Sequence[float]] = None) -> list[CellCounts]:
        deltas = self.config.delta_grid if deltas is None else deltas
        gammas = self.config.gamma_grid if gammas is None else gammas
        return [self.counts(d, g) for g in gammas for d in deltas]

    def lvals(self, gamma: Optional[float] = None) -> dict:
        """user_id -> lval for observed-eligible users (None when no resample is eligible)."""
        obs_el, res_el = self.eligibility(gamma)
        out = {}
        for i, o in enumerate(self.outcomes):
            if not obs_el[i]:
                continue
            try:
                out[o.user_id] = user_lval(o.observed_score, o.resample_scores, res_el[i])
            except ValueError:
                log.warning("user %s: no eligible resamples, lval undefined", o.user_id)
                out[o.user_id] = None
        return out

    def eligibility_mismatches(self, gamma: Optional[float] = None) -> int:
        """Resamples whose eligibility differs from the observed user's (expected 0)."""
        obs_el, res_el = self.eligibility(gamma)
        return int((res_el != obs_el[:, None]).sum())


def run_study(users: Sequence[Trajectory], config: StudyConfig, prior: Optional[Prior] = None,
              fits: Optional[dict] = None, observed: Optional[dict] = None) -> StudyResult:
    """Audit every user; ``fits`` and ``observed`` are optional per-user_id overrides."""
    prior = prior or make_default_prior()
    fits = fits or {}
    observed = observed or {}
    ids = [u.user_id for u in users]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate user ids")
    jobs = [(i, u, config, prior, fits.get(u.user_id), observed.get(u.user_id)) for i, u in enumerate(users)]
    if config.workers == 1 or len(jobs) <= 1:
        results = [_audit_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_audit_job, jobs))
    outcomes = [r for r in results if isinstance(r, UserOutcome)]
    failures = [r for r in results if isinstance(r, UserFailure)]
    for f in failures:
        log.warning("user %s excluded at %s: %s", f.user_id, f.stage, f.reason)
    return StudyResult(config, outcomes, failures)
