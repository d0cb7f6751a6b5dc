"""Thompson-sampling action layer: standardized advantage, clipping, randomization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import erfc

PROB_MIN = 0.2
PROB_MAX = 0.8
VARIANCE_TOL = 1e-12


class DegenerateVarianceError(ArithmeticError):
    pass


def normal_cdf(x):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def clip_prob(p):
    """min{0.8, 0.2 + 1.6 * max{p - 0.5, 0}}, elementwise."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise ValueError("probability outside [0, 1]")
    out = np.minimum(PROB_MAX, PROB_MIN + (PROB_MAX / 0.5) * np.maximum(arr - 0.5, 0.0))
    return float(out) if np.ndim(p) == 0 else out


def action_probability(delta):
    out = clip_prob(normal_cdf(delta))
    return out


def standardized_advantage(beta_mu, beta_sigma, f, eta):
    """(mu_beta' f - eta) / sqrt(f' Sigma_beta f); supports leading batch dims."""
    beta_mu = np.asarray(beta_mu, dtype=float)
    beta_sigma = np.asarray(beta_sigma, dtype=float)
    f = np.asarray(f, dtype=float)
    var = np.einsum("...i,...ij,...j->...", f, beta_sigma, f)
    if np.any(var <= VARIANCE_TOL):
        raise DegenerateVarianceError(f"advantage variance {np.min(var):.3g} is not positive")
    out = (np.einsum("...i,...i->...", beta_mu, f) - eta) / np.sqrt(var)
    return float(out) if out.ndim == 0 else out


def sample_action(prob: float, rng: np.random.Generator) -> int:
    """One Bernoulli draw; consumes exactly one uniform from ``rng``."""
    if not (0.0 <= prob <= 1.0):
        raise ValueError(f"probability {prob} outside [0, 1]")
    return int(rng.random() < prob)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Threshold eta_d(x) subtracted from the posterior mean advantage.

    ``hook`` maps a dosage array to thresholds; ``updater`` receives the policy
    and one night's batch of (phi, reward, weight) arrays and returns the next
    policy. Without either, the threshold is the constant ``value`` for good.
    """

    value: float = 0.0
    hook: Optional[Callable[[np.ndarray], np.ndarray]] = None
    updater: Optional[Callable[["ThresholdPolicy", dict], "ThresholdPolicy"]] = None

    @property
    def is_static(self) -> bool:
        return self.updater is None

    def evaluate(self, dosage):
        if self.hook is None:
            return np.full(np.shape(dosage), self.value) if np.ndim(dosage) else self.value
        return self.hook(dosage)

    def update(self, day_batch: dict) -> "ThresholdPolicy":
        return self if self.updater is None else self.updater(self, day_batch)


def eta_evaluate(policy: ThresholdPolicy, dosage: float) -> float:
    if not (0.0 <= dosage <= 20.0):
        raise ValueError(f"dosage {dosage} outside [0, 20]")
    value = float(policy.evaluate(dosage))
    if not math.isfinite(value):
        raise ValueError(f"threshold is not finite at dosage {dosage}")
    return value
