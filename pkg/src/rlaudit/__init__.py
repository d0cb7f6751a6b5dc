"""Resampling audits for online reinforcement-learning trials."""

from .bayes import Prior, PosteriorState, RewardFit, fit_reward_model, make_default_prior, posterior_update
from .core import ContextFeatures, DecisionPoint, Trajectory, build_trajectory
from .generative import AlgorithmConfig, GroundTruthModel, parasim_generic, parasim_run
from .interestingness import ScoreConfig, ScoreResult, smoothed_intscore
from .policy import ThresholdPolicy, action_probability, clip_prob, standardized_advantage
from .study import StudyConfig, StudyResult, count_percentile, run_study, user_lval
from .synth import SynthSpec, generate_trial, planted_cohort

__all__ = [
    "AlgorithmConfig", "ContextFeatures", "DecisionPoint", "GroundTruthModel", "PosteriorState", "Prior",
    "RewardFit", "ScoreConfig", "ScoreResult", "StudyConfig", "StudyResult", "SynthSpec", "ThresholdPolicy",
    "Trajectory", "action_probability", "build_trajectory", "clip_prob", "count_percentile",
    "fit_reward_model", "generate_trial", "make_default_prior", "parasim_generic", "parasim_run",
    "planted_cohort", "posterior_update", "run_study", "smoothed_intscore", "standardized_advantage",
    "user_lval",
]
