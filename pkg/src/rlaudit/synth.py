"""Synthetic micro-randomized trials with known reward models.

Each user's exogenous stream is drawn i.i.d. over decision times (with optional
persistence for variation/location), then the warmup + Thompson-sampling
algorithm is run on it with fresh Gaussian reward noise, so actions are
assigned exactly as the algorithm would have assigned them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bayes import MU_ALPHA0, Prior, make_default_prior
from .core import DIM_F, DIM_G, F_NAMES, Trajectory
from .generative import AlgorithmConfig, Exogenous, run_algorithm
from .policy import ThresholdPolicy
from .rng import action_tape, user_stream


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 10
    T: int = 450
    availability_rate: float = 0.8
    engagement_rate: float = 0.5
    variation_rate: float = 0.5
    location_rate: float = 0.5
    # chance that variation/location repeat the previous decision time's value
    persistence: float = 0.0
    temperature: tuple = (0.0, 1.0)
    prior30: tuple = (0.0, 1.0)
    yesterday: tuple = (0.0, 1.0)
    true_alpha: tuple = MU_ALPHA0
    true_beta: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    noise_sd: float = 1.0
    antised_rate: float = 0.1
    missing_rate: float = 0.0
    seed: int = 0
    # noise variance assumed by the algorithm; None means noise_sd ** 2
    algorithm_sigma2: Optional[float] = None
    warmup_days: int = 7
    warmup_prob: float = 0.25

    def __post_init__(self):
        for name in ("availability_rate", "engagement_rate", "variation_rate", "location_rate",
                     "persistence", "antised_rate", "missing_rate", "warmup_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        if len(self.true_alpha) != DIM_G or len(self.true_beta) != DIM_F:
            raise ValueError(f"true_alpha needs {DIM_G} entries and true_beta {DIM_F}")
        if self.n_users < 0 or self.T < 1:
            raise ValueError("n_users must be >= 0 and T >= 1")
        object.__setattr__(self, "true_alpha", tuple(float(x) for x in self.true_alpha))
        object.__setattr__(self, "true_beta", tuple(float(x) for x in self.true_beta))

    def algorithm(self, prior: Optional[Prior] = None) -> AlgorithmConfig:
        sigma2 = self.noise_sd ** 2 if self.algorithm_sigma2 is None else self.algorithm_sigma2
        return AlgorithmConfig(prior or make_default_prior(), sigma2, ThresholdPolicy(),
                               self.warmup_days, self.warmup_prob)


def _binary_process(rng, rate, persistence, T):
    fresh = rng.random(T) < rate
    keep = rng.random(T) < persistence
    out = fresh.copy()
    for t in range(1, T):
        if keep[t]:
            out[t] = out[t - 1]
    return out.astype(float)


def generate_user(spec: SynthSpec, index: int, *, beta=None, user_id: Optional[str] = None,
                  prior: Optional[Prior] = None) -> Trajectory:
    """User ``index`` of a trial; its draws depend only on (spec.seed, index)."""
    rng = user_stream(spec.seed, index)
    T = spec.T
    available = rng.random(T) < spec.availability_rate
    engagement = (rng.random(T) < spec.engagement_rate).astype(float)
    variation = _binary_process(rng, spec.variation_rate, spec.persistence, T)
    location = _binary_process(rng, spec.location_rate, spec.persistence, T)
    temperature = rng.normal(*spec.temperature, size=T)
    prior30 = rng.normal(*spec.prior30, size=T)
    yesterday = rng.normal(*spec.yesterday, size=T)
    antised = (rng.random(T) < spec.antised_rate).astype(float)
    noise = rng.normal(0.0, spec.noise_sd, size=T)
    missing = (rng.random(T) < spec.missing_rate) & available
    tape = action_tape(rng, T)

    context = np.column_stack([engagement, variation, location, temperature, prior30, yesterday])
    exo = Exogenous(available, context, antised)
    beta = np.asarray(spec.true_beta if beta is None else beta, dtype=float)
    residuals = np.where(missing, np.nan, noise)
    batch = run_algorithm(exo, spec.algorithm(prior), uniforms=tape[None, :],
                          alpha=np.asarray(spec.true_alpha), beta=beta, residuals=residuals)
    return batch.resample(0).to_trajectory(user_id or f"u{index:03d}", exo, missing=missing)


def generate_trial(spec: SynthSpec, prior: Optional[Prior] = None) -> list[Trajectory]:
    return [generate_user(spec, i, prior=prior) for i in range(spec.n_users)]


@dataclass
class PlantedCohort:
    users: list
    labels: dict = field(default_factory=dict)  # user_id -> "null" | "effect"

    @property
    def null_ids(self) -> list:
        return [u for u, lab in self.labels.items() if lab == "null"]

    @property
    def effect_ids(self) -> list:
        return [u for u, lab in self.labels.items() if lab == "effect"]


def planted_cohort(spec: SynthSpec, n_null: int, n_effect: int, effect_size: float,
                   feature: str = "intercept", prior: Optional[Prior] = None) -> PlantedCohort:
    """Null users keep ``spec.true_beta`` with the ``feature`` coefficient at 0;
    effect users get ``effect_size`` on that coefficient.

    Null users are indices 0..n_null-1, so they coincide with the first n_null
    users of ``generate_trial`` whenever ``spec.true_beta[feature]`` is already 0.
    """
    if effect_size < 0:
        raise ValueError("effect_size must be non-negative")
    col = F_NAMES.index(feature)
    null_beta = np.array(spec.true_beta)
    null_beta[col] = 0.0
    effect_beta = null_beta.copy()
    effect_beta[col] = effect_size
    cohort = PlantedCohort([])
    for i in range(n_null + n_effect):
        is_effect = i >= n_null
        traj = generate_user(spec, i, beta=effect_beta if is_effect else null_beta, prior=prior)
        cohort.users.append(traj)
        cohort.labels[traj.user_id] = "effect" if is_effect else "null"
    return cohort


def with_overrides(spec: SynthSpec, **kw) -> SynthSpec:
    return replace(spec, **kw)
