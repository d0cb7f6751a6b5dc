"""Interestingness scores of advantage-forecast streams.

Type 1 asks how consistently the forecast is positive; type 2 (for a binary
feature) how consistently forecasts at feature = 1 beat those at feature = 0.
The smoothed variants score days rather than decision times and only count
"good" days; the vectorised kernels take forecasts of shape (R, T) so that a
whole batch of resamples is scored at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bayes import BETA_SLICE
from .core import BINARY_FEATURES, F_NAMES, SLOTS_PER_DAY, Trajectory, f_matrix, n_days
from .policy import standardized_advantage

# slack for comparisons against 0.5 +- delta and 1 - gamma on ratios of small integers
EPS = 1e-9


@dataclass(frozen=True)
class ScoreConfig:
    kind: str = "type1"
    feature: Optional[str] = None
    delta: float = 0.4
    gamma: float = 0.4
    smoothing: str = "smoothed"

    def __post_init__(self):
        if self.kind not in ("type1", "type2"):
            raise ValueError(f"kind must be 'type1' or 'type2', got {self.kind!r}")
        if self.kind == "type2" and self.feature not in BINARY_FEATURES:
            raise ValueError(f"type2 needs a binary feature from {BINARY_FEATURES}, got {self.feature!r}")
        if self.kind == "type1" and self.feature is not None:
            raise ValueError("type1 scores take no feature")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 0.5), got {self.delta}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.smoothing not in ("raw", "smoothed"):
            raise ValueError(f"smoothing must be 'raw' or 'smoothed', got {self.smoothing!r}")

    @property
    def label(self) -> str:
        return "type1" if self.kind == "type1" else f"type2:{self.feature}"


@dataclass(frozen=True)
class ScoreResult:
    user_id: str
    score: Optional[float]
    eligible: bool
    good_day_count: int
    n_days: int
    interesting: Optional[bool] = None
    interesting_plus: Optional[bool] = None
    interesting_minus: Optional[bool] = None

    @property
    def good_fraction(self) -> float:
        return self.good_day_count / self.n_days if self.n_days else 0.0


def raw_intscore1(advantages, available=None) -> float:
    """Share of decision times with a strictly positive forecast."""
    adv = np.asarray(advantages, dtype=float)
    mask = np.ones(adv.shape, bool) if available is None else np.asarray(available, bool)
    if not mask.any():
        raise ValueError("no decision times to score")
    return float(np.count_nonzero(adv[mask] > 0) / np.count_nonzero(mask))


def raw_intscore2(advantage_at1, advantage_at0, available=None) -> float:
    """Share of decision times where the forecast with the feature on strictly wins."""
    a1 = np.asarray(advantage_at1, dtype=float)
    a0 = np.asarray(advantage_at0, dtype=float)
    mask = np.ones(a1.shape, bool) if available is None else np.asarray(available, bool)
    if not mask.any():
        raise ValueError("no decision times to score")
    return float(np.count_nonzero(a1[mask] > a0[mask]) / np.count_nonzero(mask))


def counterfactual_forecasts(snapshots, context, dosage, feature, slots_per_day=SLOTS_PER_DAY):
    """Forecasts with ``feature`` forced to 1 and 0, recomputed from posterior snapshots.

    ``snapshots[k]`` is (mu, sigma, threshold) in force during day k + 1.
    """
    if snapshots is None:
        raise ValueError("posterior snapshots are required for counterfactual forecasts")
    col = F_NAMES.index(feature)
    T = len(dosage)
    at1, at0 = np.empty(T), np.empty(T)
    for i in range(T):
        mu, sigma, eta = snapshots[i // slots_per_day]
        f = f_matrix(np.asarray(context[i]), np.asarray(dosage[i]))
        thr = float(eta.evaluate(float(dosage[i])))
        f[col] = 1.0
        at1[i] = standardized_advantage(mu[BETA_SLICE], sigma[BETA_SLICE, BETA_SLICE], f, thr)
        f[col] = 0.0
        at0[i] = standardized_advantage(mu[BETA_SLICE], sigma[BETA_SLICE, BETA_SLICE], f, thr)
    return at1, at0


def sliding_window(d: int, kind: str, T: int) -> list[int]:
    """1-based decision times in day d's window, clipped to [1, T]."""
    if not 1 <= d <= n_days(T):
        raise ValueError(f"day {d} outside 1..{n_days(T)}")
    if kind == "type1":
        lo, hi = SLOTS_PER_DAY * (d - 1) + 1, SLOTS_PER_DAY * d
    else:
        lo, hi = SLOTS_PER_DAY * (d - 2) + 1, SLOTS_PER_DAY * (d + 1)
    return list(range(max(lo, 1), min(hi, T) + 1))


def window_matrix(T: int, kind: str) -> np.ndarray:
    D = n_days(T)
    W = np.zeros((D, T))
    for d in range(1, D + 1):
        W[d - 1, np.array(sliding_window(d, kind, T)) - 1] = 1.0
    return W


def good_days(available, update_log, kind: str, feature_values=None) -> np.ndarray:
    """Good-day indicator for days 1..D as a bool array."""
    available = np.asarray(available, dtype=float)
    log = np.asarray(update_log, dtype=bool)
    T = len(available)
    D = n_days(T)
    W = window_matrix(T, kind)
    if kind == "type1":
        enough = W @ available >= 2
        fresh = np.zeros(D, bool)
        fresh[1:] = log[:D - 1]
        return enough & fresh
    v = np.asarray(feature_values, dtype=float)
    enough = (W @ (available * v) >= 2) & (W @ (available * (1 - v)) >= 2)
    fresh = np.array([log[max(k - 1, 0):min(k + 2, D)].any() for k in range(D)])
    return enough & fresh


def good_day(traj: Trajectory, d: int, kind: str, feature: Optional[str] = None) -> bool:
    values = traj.feature_values(feature) if kind == "type2" else None
    return bool(good_days(traj.available_array, traj.posterior_update_log, kind, values)[d - 1])


def day_wins(advantage, available, kind: str, feature_values=None) -> np.ndarray:
    """Per-day indicator that the window summary favours treatment (or feature = 1).

    ``advantage`` is (..., T); days whose window means are undefined give False.
    """
    adv = np.asarray(advantage, dtype=float)
    avail = np.asarray(available, dtype=float)
    T = adv.shape[-1]
    W = window_matrix(T, kind)
    if kind == "type1":
        weighted = np.where(avail > 0, adv, 0.0)
        total, count = weighted @ W.T, W @ avail
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = total / count
        return np.where(count > 0, mean > 0, False)
    v = np.asarray(feature_values, dtype=float)
    on, off = avail * v, avail * (1 - v)
    n_on, n_off = W @ on, W @ off
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_on = (np.where(on > 0, adv, 0.0) @ W.T) / n_on
        mean_off = (np.where(off > 0, adv, 0.0) @ W.T) / n_off
    return np.where((n_on > 0) & (n_off > 0), mean_on > mean_off, False)


def smoothed_scores(advantage, available, update_log, kind: str, feature_values=None):
    """(scores, good) for a batch; scores are NaN when no day is good."""
    good = good_days(available, update_log, kind, feature_values)
    wins = day_wins(advantage, available, kind, feature_values)
    n_good = int(good.sum())
    if n_good == 0:
        return np.full(np.shape(advantage)[:-1], np.nan), good
    return (wins & good).sum(axis=-1) / n_good, good


def is_eligible(good_day_count, D: int, gamma: float):
    return np.asarray(good_day_count) >= (1.0 - gamma) * D - EPS


def interesting_flags(score, delta: float):
    """(interesting, plus, minus) elementwise; NaN scores give False."""
    s = np.asarray(score, dtype=float)
    with np.errstate(invalid="ignore"):
        plus = s >= 0.5 + delta - EPS
        minus = s <= 0.5 - delta + EPS
    return plus | minus, plus, minus


def classify(result: ScoreResult, delta: float) -> ScoreResult:
    if not result.eligible or result.score is None:
        return ScoreResult(result.user_id, result.score, False, result.good_day_count, result.n_days)
    both, plus, minus = interesting_flags(result.score, delta)
    return ScoreResult(result.user_id, result.score, True, result.good_day_count, result.n_days,
                       bool(both), bool(plus), bool(minus))


def score_stream(user_id: str, advantage, available, update_log, config: ScoreConfig,
                 feature_values=None, counterfactual=None) -> ScoreResult:
    """Score one forecast stream and classify it under ``config``.

    Raw type 2 needs ``counterfactual`` = (forecasts at feature 1, at feature 0).
    """
    available = np.asarray(available, dtype=bool)
    D = n_days(len(available))
    if config.smoothing == "raw":
        if not available.any():
            return ScoreResult(user_id, None, False, 0, D)
        if config.kind == "type1":
            score = raw_intscore1(advantage, available)
        else:
            if counterfactual is None:
                raise ValueError("raw type-2 scoring needs counterfactual forecasts")
            score = raw_intscore2(counterfactual[0], counterfactual[1], available)
        return classify(ScoreResult(user_id, score, True, D, D), config.delta)
    score, good = smoothed_scores(advantage, available, update_log, config.kind, feature_values)
    count = int(good.sum())
    eligible = bool(count > 0 and is_eligible(count, D, config.gamma))
    value = float(score) if eligible else None
    return classify(ScoreResult(user_id, value, eligible, count, D), config.delta)


def smoothed_intscore(traj: Trajectory, config: ScoreConfig, advantage=None) -> ScoreResult:
    """Smoothed score of a trajectory; forecasts default to its recorded stream."""
    adv = traj.advantage if advantage is None else advantage
    if adv is None:
        raise ValueError(f"user {traj.user_id}: no advantage forecasts to score")
    values = traj.feature_values(config.feature) if config.kind == "type2" else None
    smoothed = config if config.smoothing == "smoothed" else ScoreConfig(
        config.kind, config.feature, config.delta, config.gamma, "smoothed")
    return score_stream(traj.user_id, np.asarray(adv, dtype=float), traj.available_array,
                        traj.posterior_update_log, smoothed, values)
