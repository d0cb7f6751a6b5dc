"""Resampling user trajectories by rerunning the Thompson-sampling algorithm.

The engine (:func:`run_algorithm`) advances a batch of R independent resamples
in lockstep over the decision times of one user. All resamples share the
exogenous inputs (availability, context, anti-sedentary events, residuals);
they differ only through their action tapes, one uniform per decision time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bayes import (
    BETA_SLICE,
    PosteriorState,
    Prior,
    RewardFit,
    SingularCovarianceError,
    accumulate,
    design_tilde,
    moments_from_precision,
    spd_inverse,
)
from .core import (
    CONTEXT_COLUMNS,
    DIM_F,
    DIM_PHI,
    DOSAGE_DECAY,
    F_NAMES,
    SLOTS_PER_DAY,
    ContextFeatures,
    DecisionPoint,
    Trajectory,
    f_matrix,
    g_matrix,
    n_days,
)
from .policy import (
    DegenerateVarianceError,
    ThresholdPolicy,
    action_probability,
    sample_action,
    standardized_advantage,
)
from .rng import action_tape

NULL_FEATURES = ("dosage", "engagement", "location", "variation")
SCORE_FEATURES = ("engagement", "location", "variation")


class SimulationError(RuntimeError):
    def __init__(self, message: str, t: int, day: int):
        super().__init__(f"t={t}, day={day}: {message}")
        self.t = t
        self.day = day


@dataclass(frozen=True)
class AlgorithmConfig:
    prior: Prior
    sigma2: float = 1.0
    threshold: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    warmup_days: int = 7
    warmup_prob: float = 0.25
    decay: float = DOSAGE_DECAY

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not 0.0 <= self.warmup_prob <= 1.0:
            raise ValueError("warmup_prob must be a probability")


@dataclass(frozen=True)
class Exogenous:
    """Per-t inputs held fixed across resamples."""

    available: np.ndarray
    context: np.ndarray
    antised: np.ndarray

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "Exogenous":
        return cls(traj.available_array, traj.context_matrix, traj.antised_array)

    @property
    def T(self) -> int:
        return len(self.available)


@dataclass(frozen=True)
class GroundTruthModel:
    user_id: str
    exogenous: Exogenous
    residuals: np.ndarray  # NaN where no residual exists
    alpha: np.ndarray
    beta: np.ndarray
    algorithm: AlgorithmConfig

    def __post_init__(self):
        if self.algorithm.warmup_days * SLOTS_PER_DAY > self.T:
            raise ValueError(f"warmup of {self.algorithm.warmup_days} days exceeds horizon T={self.T}")
        if len(self.residuals) != self.T:
            raise ValueError("residuals must cover every decision time")

    @property
    def T(self) -> int:
        return self.exogenous.T


@dataclass
class SimulationBatch:
    """Arrays of shape (R, T) unless noted; ``update_log`` is (D,)."""

    dosage: np.ndarray
    action: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    advantage: np.ndarray
    update_log: np.ndarray
    counterfactual: dict = field(default_factory=dict)  # feature -> (adv at 1, adv at 0)
    mu_snapshots: Optional[np.ndarray] = None  # (R, D+1, 18); index 0 is the prior
    sigma_snapshots: Optional[np.ndarray] = None  # (R, D+1, 18, 18)
    eta_snapshots: Optional[list] = None  # [r][d] -> ThresholdPolicy

    @property
    def R(self) -> int:
        return self.action.shape[0]

    def resample(self, r: int, seed=None) -> "ResampledTrajectory":
        snaps = None
        if self.mu_snapshots is not None:
            snaps = [
                (self.mu_snapshots[r, d], self.sigma_snapshots[r, d], self.eta_snapshots[r][d])
                for d in range(self.mu_snapshots.shape[1])
            ]
        return ResampledTrajectory(
            dosage=self.dosage[r], action=self.action[r], prob=self.prob[r],
            reward=self.reward[r], advantage=self.advantage[r],
            update_log=self.update_log, posterior_snapshots=snaps, seed=seed,
            counterfactual={k: (v[0][r], v[1][r]) for k, v in self.counterfactual.items()},
        )


@dataclass
class ResampledTrajectory:
    dosage: np.ndarray
    action: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    advantage: np.ndarray
    update_log: np.ndarray
    posterior_snapshots: Optional[list] = None
    seed: object = None
    counterfactual: dict = field(default_factory=dict)

    def to_trajectory(self, user_id: str, exo: Exogenous, missing: Optional[np.ndarray] = None) -> Trajectory:
        missing = np.isnan(self.reward) & exo.available if missing is None else missing
        points = []
        for i in range(exo.T):
            row = exo.context[i]
            points.append(DecisionPoint(
                t=i + 1,
                available=int(exo.available[i]),
                context=ContextFeatures(int(row[0]), int(row[1]), int(row[2]), row[3], row[4], row[5]),
                anti_sedentary=int(exo.antised[i]),
                dosage=float(self.dosage[i]),
                action=int(self.action[i]),
                action_prob=None if np.isnan(self.prob[i]) else float(self.prob[i]),
                reward=None if np.isnan(self.reward[i]) else float(self.reward[i]),
                missing=bool(missing[i]),
            ))
        return Trajectory(user_id, tuple(points), tuple(bool(x) for x in self.update_log),
                          advantage=tuple(float(x) for x in self.advantage))


@dataclass(frozen=True)
class ObservedDecisions:
    """Recorded actions/probabilities/rewards that replace simulated ones."""

    action: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    usable: np.ndarray


def _phi_rows(g, f, prob, action):
    return np.concatenate([g, prob[:, None] * f, (action - prob)[:, None] * f], axis=1)


def _eval_thresholds(thresholds: list, dosage: np.ndarray) -> np.ndarray:
    first = thresholds[0]
    if all(th is first for th in thresholds):
        return np.asarray(first.evaluate(dosage), dtype=float)
    return np.array([float(th.evaluate(x)) for th, x in zip(thresholds, dosage)])


def run_algorithm(exo: Exogenous, algo: AlgorithmConfig, *, uniforms: Optional[np.ndarray] = None,
                  alpha: Optional[np.ndarray] = None, beta: Optional[np.ndarray] = None,
                  residuals: Optional[np.ndarray] = None, observed: Optional[ObservedDecisions] = None,
                  counterfactual: Sequence[str] = (), keep_snapshots: bool = False) -> SimulationBatch:
    """Run the warmup + Thompson-sampling algorithm over one user's horizon.

    Simulation mode (``uniforms`` of shape (R, T), plus ``alpha``, ``beta`` and
    ``residuals``): actions are Bernoulli draws via u < prob and rewards follow
    the linear model with the given residual at each t. Replay mode
    (``observed``): actions, probabilities and rewards are taken from the
    record and only the posterior path and forecasts are recomputed.
    """
    T = exo.T
    D = n_days(T)
    replay = observed is not None
    if replay:
        R = 1
    else:
        uniforms = np.atleast_2d(np.asarray(uniforms, dtype=float))
        R = uniforms.shape[0]
        if uniforms.shape[1] != T:
            raise ValueError(f"uniform tape has {uniforms.shape[1]} columns, horizon is {T}")
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        residuals = np.asarray(residuals, dtype=float)
    for name in counterfactual:
        if name not in SCORE_FEATURES:
            raise ValueError(f"counterfactual forecasts need a binary f-feature, got {name!r}")

    prior = algo.prior
    prec = np.broadcast_to(spd_inverse(prior.sigma0), (R, DIM_PHI, DIM_PHI)).copy()
    info = np.broadcast_to(prec[0] @ prior.mu0, (R, DIM_PHI)).copy()
    mu = np.broadcast_to(prior.mu0, (R, DIM_PHI)).copy()
    sigma = np.broadcast_to(prior.sigma0, (R, DIM_PHI, DIM_PHI)).copy()
    thresholds = [algo.threshold] * R

    shape = (R, T)
    out_dosage = np.empty(shape)
    out_action = np.zeros(shape)
    out_prob = np.full(shape, np.nan)
    out_reward = np.full(shape, np.nan)
    out_adv = np.empty(shape)
    cf = {name: (np.empty(shape), np.empty(shape)) for name in counterfactual}
    log = np.zeros(D, dtype=bool)
    if keep_snapshots:
        mu_snap = np.empty((R, D + 1, DIM_PHI))
        sigma_snap = np.empty((R, D + 1, DIM_PHI, DIM_PHI))
        eta_snap = [[algo.threshold] for _ in range(R)]
        mu_snap[:, 0], sigma_snap[:, 0] = mu, sigma

    day_phi = np.zeros((R, SLOTS_PER_DAY, DIM_PHI))
    day_reward = np.zeros((R, SLOTS_PER_DAY))
    day_weight = np.zeros(SLOTS_PER_DAY)
    dosage = np.zeros(R)
    prev_action = np.zeros(R)
    prev_antised = 0.0
    warm_T = algo.warmup_days * SLOTS_PER_DAY
    ctx = exo.context

    for t in range(T):
        slot = t % SLOTS_PER_DAY
        day = t // SLOTS_PER_DAY + 1
        if t > 0:
            dosage = algo.decay * dosage + np.maximum(prev_action, prev_antised)
        f = f_matrix(ctx[t], dosage)
        mu_beta = mu[:, BETA_SLICE]
        sigma_beta = sigma[:, BETA_SLICE, BETA_SLICE]
        try:
            eta = _eval_thresholds(thresholds, dosage)
            adv = np.atleast_1d(standardized_advantage(mu_beta, sigma_beta, f, eta))
            for name, (at1, at0) in cf.items():
                col = F_NAMES.index(name)
                f_cf = f.copy()
                f_cf[:, col] = 1.0
                at1[:, t] = standardized_advantage(mu_beta, sigma_beta, f_cf, eta)
                f_cf[:, col] = 0.0
                at0[:, t] = standardized_advantage(mu_beta, sigma_beta, f_cf, eta)
        except DegenerateVarianceError as exc:
            raise SimulationError(str(exc), t + 1, day) from exc
        available = bool(exo.available[t])

        if replay:
            action = np.array([observed.action[t]])
            if available:
                prob = np.array([observed.prob[t]])
                if np.isnan(prob[0]):
                    prob = np.full(R, algo.warmup_prob) if t < warm_T else np.atleast_1d(action_probability(adv))
            else:
                prob = np.full(R, np.nan)
            weight = float(observed.usable[t])
            reward = np.array([observed.reward[t]])
        elif available:
            prob = np.full(R, algo.warmup_prob) if t < warm_T else np.atleast_1d(action_probability(adv))
            action = (uniforms[:, t] < prob).astype(float)
            eps = residuals[t]
            if np.isfinite(eps):
                g = g_matrix(ctx[t], dosage)
                reward = g @ alpha + action * (f @ beta) + eps
                weight = 1.0
            else:
                reward = np.full(R, np.nan)
                weight = 0.0
        else:
            prob = np.full(R, np.nan)
            action = np.zeros(R)
            reward = np.full(R, np.nan)
            weight = 0.0

        out_dosage[:, t] = dosage
        out_action[:, t] = action
        out_prob[:, t] = prob
        out_reward[:, t] = reward
        out_adv[:, t] = adv
        if weight:
            day_phi[:, slot] = _phi_rows(g_matrix(ctx[t], dosage), f, prob, action)
            day_reward[:, slot] = reward
        else:
            day_phi[:, slot] = 0.0
            day_reward[:, slot] = 0.0
        day_weight[slot] = weight

        if slot == SLOTS_PER_DAY - 1:
            if exo.available[t + 1 - SLOTS_PER_DAY:t + 1].any():
                log[day - 1] = True
                if day_weight.any():
                    prec, info = accumulate(prec, info, day_phi, day_reward, day_weight, algo.sigma2)
                    try:
                        mu, sigma = moments_from_precision(prec, info, day)
                    except SingularCovarianceError as exc:
                        raise SimulationError(str(exc), t + 1, day) from exc
                if not all(th.is_static for th in thresholds):
                    thresholds = [
                        th.update({"phi": day_phi[r], "reward": day_reward[r], "weight": day_weight.copy()})
                        for r, th in enumerate(thresholds)
                    ]
            if keep_snapshots:
                mu_snap[:, day], sigma_snap[:, day] = mu, sigma
                for r in range(R):
                    eta_snap[r].append(thresholds[r])
            day_weight[:] = 0.0
        prev_action = action
        prev_antised = float(exo.antised[t])

    if keep_snapshots and T % SLOTS_PER_DAY:
        mu_snap[:, D], sigma_snap[:, D] = mu, sigma
        for r in range(R):
            eta_snap[r].append(thresholds[r])

    batch = SimulationBatch(out_dosage, out_action, out_prob, out_reward, out_adv, log, cf)
    if keep_snapshots:
        batch.mu_snapshots, batch.sigma_snapshots, batch.eta_snapshots = mu_snap, sigma_snap, eta_snap
    return batch


def replay_observed(traj: Trajectory, algo: AlgorithmConfig, counterfactual: Sequence[str] = (),
                    keep_snapshots: bool = False) -> SimulationBatch:
    """Recompute the algorithm's posterior path and forecasts on recorded data."""
    observed = ObservedDecisions(traj.action_array, traj.prob_array, traj.reward_array, traj.usable_array)
    return run_algorithm(Exogenous.from_trajectory(traj), algo, observed=observed,
                         counterfactual=counterfactual, keep_snapshots=keep_snapshots)


def compute_residuals(traj: Trajectory, alpha, beta) -> np.ndarray:
    """R_t - alpha'g - A_t beta'f at usable t; NaN elsewhere."""
    coef = np.concatenate([np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)])
    phi, reward, usable = design_tilde(traj)
    if coef.shape != (phi.shape[1],):
        raise ValueError(f"expected {phi.shape[1]} coefficients, got {coef.shape}")
    return np.where(usable, reward - phi @ coef, np.nan)


def _model(traj, fit: RewardFit, prior: Prior, beta, *, sigma2=None, threshold=None,
           warmup_days=7, warmup_prob=0.25) -> GroundTruthModel:
    algo = AlgorithmConfig(prior, fit.sigma2 if sigma2 is None else sigma2,
                           threshold or ThresholdPolicy(), warmup_days, warmup_prob)
    return GroundTruthModel(traj.user_id, Exogenous.from_trajectory(traj),
                            compute_residuals(traj, fit.alpha, fit.beta),
                            fit.alpha.copy(), np.asarray(beta, dtype=float), algo)


def make_fitted_model(traj: Trajectory, fit: RewardFit, prior: Prior, **algo_kw) -> GroundTruthModel:
    return _model(traj, fit, prior, fit.beta.copy(), **algo_kw)


def make_null_advantage_model(traj: Trajectory, fit: RewardFit, prior: Prior, **algo_kw) -> GroundTruthModel:
    """Fitted baseline, zero treatment effect in every state."""
    return _model(traj, fit, prior, np.zeros(DIM_F), **algo_kw)


def make_null_feature_model(traj: Trajectory, fit: RewardFit, prior: Prior, feature: str,
                            **algo_kw) -> GroundTruthModel:
    """Fitted model with the treatment-effect coefficient of ``feature`` zeroed."""
    if feature not in NULL_FEATURES:
        raise ValueError(f"feature must be one of {NULL_FEATURES}, got {feature!r}")
    beta = fit.beta.copy()
    beta[F_NAMES.index(feature)] = 0.0
    return _model(traj, fit, prior, beta, **algo_kw)


def parasim_batch(model: GroundTruthModel, uniforms: np.ndarray, **kw) -> SimulationBatch:
    return run_algorithm(model.exogenous, model.algorithm, uniforms=uniforms, alpha=model.alpha,
                         beta=model.beta, residuals=model.residuals, **kw)


def parasim_run(model: GroundTruthModel, rng: np.random.Generator, *, keep_snapshots: bool = True,
                counterfactual: Sequence[str] = (), seed=None) -> ResampledTrajectory:
    """One resampled trajectory; consumes exactly T uniforms from ``rng``."""
    tape = action_tape(rng, model.T)
    batch = parasim_batch(model, tape[None, :], keep_snapshots=keep_snapshots, counterfactual=counterfactual)
    return batch.resample(0, seed=seed)


def parasim_generic(init_state: Callable, transition: Callable, reward_model: Callable,
                    noise_model: Callable, agent, T: int, rng: np.random.Generator) -> list:
    """Resample one trajectory from an arbitrary MDP and learning agent.

    ``init_state(rng)`` draws S_1; ``agent.prob(t, s)`` and ``agent.forecast(t, s)``
    give the treatment probability and advantage forecast; the action is a
    Bernoulli draw from ``rng``; ``reward_model(t, s, a) + noise_model(t, rng)``
    is the reward; ``agent.update(t, s, a, r)`` lets the algorithm learn;
    ``transition(t, s, a, rng)`` draws the next state. Returns a list of
    (S_t, A_t, R_t, forecast_t) tuples.
    """
    out = []
    if T <= 0:
        return out
    state = init_state(rng)
    for t in range(1, T + 1):
        forecast = agent.forecast(t, state)
        action = sample_action(agent.prob(t, state), rng)
        reward = reward_model(t, state, action) + noise_model(t, rng)
        out.append((state, action, reward, forecast))
        agent.update(t, state, action, reward)
        if t < T:
            state = transition(t, state, action, rng)
    return out


class ThompsonAgent:
    """The warmup + Thompson-sampling algorithm as a stateful agent.

    States passed in are dicts with keys ``available``, ``context`` (6-vector)
    and ``dosage``. Uses the same numerical kernels as :func:`run_algorithm`.
    """

    def __init__(self, algo: AlgorithmConfig):
        self.algo = algo
        prior = algo.prior
        self.prec = spd_inverse(prior.sigma0)[None]
        self.info = (self.prec[0] @ prior.mu0)[None]
        self.mu = prior.mu0[None].copy()
        self.sigma = prior.sigma0[None].copy()
        self.threshold = algo.threshold
        self.day_phi, self.day_reward, self.day_weight, self.day_avail = [], [], [], []
        self.update_log = []

    def forecast(self, t, state) -> float:
        f = f_matrix(np.asarray(state["context"]), np.array([state["dosage"]]))
        eta = np.asarray(self.threshold.evaluate(np.array([state["dosage"]])), dtype=float)
        return float(np.atleast_1d(standardized_advantage(
            self.mu[:, BETA_SLICE], self.sigma[:, BETA_SLICE, BETA_SLICE], f, eta))[0])

    def prob(self, t, state) -> float:
        if not state["available"]:
            return 0.0
        if t <= self.algo.warmup_days * SLOTS_PER_DAY:
            return self.algo.warmup_prob
        return float(np.atleast_1d(action_probability(np.array([self.forecast(t, state)])))[0])

    def update(self, t, state, action, reward):
        available = bool(state["available"])
        weight = float(available and math.isfinite(reward))
        prob = np.array([self.prob(t, state)]) if available else np.array([np.nan])
        ctx = np.asarray(state["context"])
        dose = np.array([state["dosage"]])
        if weight:
            phi = _phi_rows(g_matrix(ctx, dose), f_matrix(ctx, dose), prob, np.array([float(action)]))
            self.day_phi.append(phi[0])
            self.day_reward.append(reward)
        else:
            self.day_phi.append(np.zeros(DIM_PHI))
            self.day_reward.append(0.0)
        self.day_weight.append(weight)
        self.day_avail.append(available)
        if t % SLOTS_PER_DAY == 0:
            ran = any(self.day_avail)
            self.update_log.append(ran)
            if ran and any(self.day_weight):
                self.prec, self.info = accumulate(self.prec, self.info, np.array(self.day_phi)[None],
                                                  np.array(self.day_reward)[None], np.array(self.day_weight),
                                                  self.algo.sigma2)
                self.mu, self.sigma = moments_from_precision(self.prec, self.info, t // SLOTS_PER_DAY)
            self.day_phi, self.day_reward, self.day_weight, self.day_avail = [], [], [], []


def engine_hooks(model: GroundTruthModel) -> dict:
    """Hooks that express :func:`parasim_run` as an instance of :func:`parasim_generic`.

    The transition is a point mass on the recorded next exogenous state with
    dosage recomputed from the sampled action; noise replays the residuals.
    """
    exo, algo = model.exogenous, model.algorithm

    def state_at(i, dosage):
        return {"t": i + 1, "available": bool(exo.available[i]), "context": exo.context[i], "dosage": dosage}

    def init_state(rng):
        return state_at(0, 0.0)

    def transition(t, state, action, rng):
        dose = algo.decay * state["dosage"] + max(float(action), float(exo.antised[t - 1]))
        return state_at(t, dose)

    def reward_model(t, state, action):
        if not state["available"]:
            return math.nan
        ctx, dose = np.asarray(state["context"]), np.array([state["dosage"]])
        g = g_matrix(ctx, dose)
        f = f_matrix(ctx, dose)
        return float((g @ model.alpha + float(action) * (f @ model.beta))[0])

    def noise_model(t, rng):
        return float(model.residuals[t - 1])

    return {"init_state": init_state, "transition": transition, "reward_model": reward_model,
            "noise_model": noise_model}


def posterior_state_at(batch: SimulationBatch, r: int, day: int) -> PosteriorState:
    """Posterior in force during 1-based ``day`` (after nights 1..day-1)."""
    if batch.mu_snapshots is None:
        raise ValueError("simulation was run without snapshots")
    return PosteriorState(day - 1, batch.mu_snapshots[r, day - 1], batch.sigma_snapshots[r, day - 1],
                          batch.eta_snapshots[r][day - 1])
