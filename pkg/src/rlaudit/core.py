"""Trajectory domain types and feature-vector construction.

Feature orders are fixed across the package:

    g   = (intercept, temperature, prior30, yesterday, dosage, engagement, location, variation)
    f   = (intercept, dosage, engagement, location, variation)
    phi = [g, prob * f, (action - prob) * f]
    phi_tilde = [g, action * f]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

SLOTS_PER_DAY = 5
DOSAGE_DECAY = 0.95
DOSAGE_MAX = 20.0

G_NAMES = (
    "intercept",
    "temperature",
    "prior30",
    "yesterday",
    "dosage",
    "engagement",
    "location",
    "variation",
)
F_NAMES = ("intercept", "dosage", "engagement", "location", "variation")
BINARY_FEATURES = ("engagement", "variation", "location")
CONTINUOUS_FEATURES = ("temperature", "prior30", "yesterday")
# column order of the context matrix returned by Trajectory.context_matrix
CONTEXT_COLUMNS = ("engagement", "variation", "location", "temperature", "prior30", "yesterday")

DIM_G = len(G_NAMES)
DIM_F = len(F_NAMES)
DIM_PHI = DIM_G + 2 * DIM_F
DIM_PHI_TILDE = DIM_G + DIM_F


class DataQualityError(ValueError):
    """Raised when a record violates a trajectory invariant."""


def day_of(t: int) -> int:
    """1-based day index of 1-based decision time ``t``."""
    return (t - 1) // SLOTS_PER_DAY + 1


def n_days(T: int) -> int:
    return -(-T // SLOTS_PER_DAY)


def _binary(name: str, value) -> int:
    if value not in (0, 1) or isinstance(value, float) and not float(value).is_integer():
        raise DataQualityError(f"{name} must be 0 or 1, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class ContextFeatures:
    engagement: int = 0
    variation: int = 0
    location: int = 0
    temperature: float = 0.0
    prior_30min_steps: float = 0.0
    yesterday_steps: float = 0.0

    def __post_init__(self):
        for name in BINARY_FEATURES:
            object.__setattr__(self, name, _binary(name, getattr(self, name)))
        for name in ("temperature", "prior_30min_steps", "yesterday_steps"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DataQualityError(f"{name} is not finite: {value!r}")
            object.__setattr__(self, name, value)

    def as_row(self) -> tuple[float, ...]:
        """Values in CONTEXT_COLUMNS order."""
        return (
            self.engagement,
            self.variation,
            self.location,
            self.temperature,
            self.prior_30min_steps,
            self.yesterday_steps,
        )


@dataclass(frozen=True)
class DecisionPoint:
    t: int
    available: int
    context: ContextFeatures
    anti_sedentary: int = 0
    dosage: float = 0.0
    action: Optional[int] = None
    action_prob: Optional[float] = None
    reward: Optional[float] = None
    missing: bool = False

    def __post_init__(self):
        if self.t < 1:
            raise DataQualityError(f"decision time must be >= 1, got {self.t}")
        object.__setattr__(self, "available", _binary("available", self.available))
        object.__setattr__(self, "anti_sedentary", _binary("anti_sedentary", self.anti_sedentary))
        if self.action is not None:
            object.__setattr__(self, "action", _binary("action", self.action))
        if not self.available and self.action == 1:
            raise DataQualityError(f"t={self.t}: action=1 while unavailable")
        if not (0.0 <= self.dosage <= DOSAGE_MAX):
            raise DataQualityError(f"t={self.t}: dosage {self.dosage} outside [0, {DOSAGE_MAX}]")
        if self.action_prob is not None and not (0.0 <= self.action_prob <= 1.0):
            raise DataQualityError(f"t={self.t}: action_prob {self.action_prob} outside [0, 1]")
        if self.reward is not None and not math.isfinite(self.reward):
            raise DataQualityError(f"t={self.t}: reward is not finite")

    @property
    def day(self) -> int:
        return day_of(self.t)

    @property
    def usable(self) -> bool:
        """Available, observed, and carrying a reward: enters posterior updates."""
        return bool(self.available) and not self.missing and self.reward is not None


def update_dosage(prev_dosage, prev_action, prev_antised, decay: float = DOSAGE_DECAY):
    """One step of the dosage recursion; works elementwise on arrays."""
    out = decay * np.asarray(prev_dosage, dtype=float) + np.maximum(prev_action, prev_antised)
    return float(out) if out.ndim == 0 else out


def build_g(point: DecisionPoint) -> np.ndarray:
    c = point.context
    return np.array(
        [1.0, c.temperature, c.prior_30min_steps, c.yesterday_steps, point.dosage,
         c.engagement, c.location, c.variation],
        dtype=float,
    )


def build_f(point: DecisionPoint) -> np.ndarray:
    c = point.context
    return np.array([1.0, point.dosage, c.engagement, c.location, c.variation], dtype=float)


def build_phi(point: DecisionPoint, action: int, prob: float) -> np.ndarray:
    if not (0.0 <= prob <= 1.0):
        raise ValueError(f"probability {prob} outside [0, 1]")
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    f = build_f(point)
    return np.concatenate([build_g(point), prob * f, (action - prob) * f])


def build_phi_tilde(point: DecisionPoint, action: int) -> np.ndarray:
    return np.concatenate([build_g(point), action * build_f(point)])


def g_matrix(context: np.ndarray, dosage: np.ndarray) -> np.ndarray:
    """Vectorised g over rows; ``context`` is (..., 6) in CONTEXT_COLUMNS order."""
    dosage = np.asarray(dosage, dtype=float)
    shape = np.broadcast_shapes(context.shape[:-1], dosage.shape)
    out = np.empty(shape + (DIM_G,))
    out[..., 0] = 1.0
    out[..., 1] = context[..., 3]
    out[..., 2] = context[..., 4]
    out[..., 3] = context[..., 5]
    out[..., 4] = dosage
    out[..., 5] = context[..., 0]
    out[..., 6] = context[..., 2]
    out[..., 7] = context[..., 1]
    return out


def f_matrix(context: np.ndarray, dosage: np.ndarray) -> np.ndarray:
    dosage = np.asarray(dosage, dtype=float)
    shape = np.broadcast_shapes(context.shape[:-1], dosage.shape)
    out = np.empty(shape + (DIM_F,))
    out[..., 0] = 1.0
    out[..., 1] = dosage
    out[..., 2] = context[..., 0]
    out[..., 3] = context[..., 2]
    out[..., 4] = context[..., 1]
    return out


@dataclass(frozen=True)
class Trajectory:
    """One user's decision points, t = 1..T contiguous."""

    user_id: str
    points: tuple[DecisionPoint, ...]
    posterior_update_log: Optional[tuple[bool, ...]] = None
    # recorded advantage forecasts, when the data source supplies them
    advantage: Optional[tuple[float, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise DataQualityError(f"user {self.user_id}: empty trajectory")
        for expected, p in enumerate(self.points, start=1):
            if p.t != expected:
                raise DataQualityError(
                    f"user {self.user_id}: decision times not contiguous (expected t={expected}, got {p.t})"
                )
        prev = None
        for p in self.points:
            want = 0.0 if prev is None else update_dosage(prev.dosage, prev.action or 0, prev.anti_sedentary)
            if abs(p.dosage - want) > 1e-6:
                raise DataQualityError(
                    f"user {self.user_id}: t={p.t} dosage {p.dosage} breaks the recursion (expected {want})"
                )
            prev = p
        if self.posterior_update_log is None:
            object.__setattr__(self, "posterior_update_log", update_guard(self.available_array))
        elif len(self.posterior_update_log) != self.D:
            raise DataQualityError(f"user {self.user_id}: posterior_update_log must have {self.D} entries")
        if self.advantage is not None and len(self.advantage) != self.T:
            raise DataQualityError(f"user {self.user_id}: advantage stream must have {self.T} entries")

    @property
    def T(self) -> int:
        return len(self.points)

    @property
    def D(self) -> int:
        return n_days(self.T)

    @cached_property
    def available_array(self) -> np.ndarray:
        return np.array([p.available for p in self.points], dtype=bool)

    @cached_property
    def context_matrix(self) -> np.ndarray:
        return np.array([p.context.as_row() for p in self.points], dtype=float)

    @cached_property
    def antised_array(self) -> np.ndarray:
        return np.array([p.anti_sedentary for p in self.points], dtype=float)

    @cached_property
    def missing_array(self) -> np.ndarray:
        return np.array([p.missing for p in self.points], dtype=bool)

    @cached_property
    def usable_array(self) -> np.ndarray:
        return np.array([p.usable for p in self.points], dtype=bool)

    @cached_property
    def action_array(self) -> np.ndarray:
        return np.array([p.action or 0 for p in self.points], dtype=float)

    @cached_property
    def prob_array(self) -> np.ndarray:
        return np.array([np.nan if p.action_prob is None else p.action_prob for p in self.points])

    @cached_property
    def reward_array(self) -> np.ndarray:
        return np.array([np.nan if p.reward is None else p.reward for p in self.points])

    @cached_property
    def dosage_array(self) -> np.ndarray:
        return np.array([p.dosage for p in self.points])

    def feature_values(self, name: str) -> np.ndarray:
        if name not in CONTEXT_COLUMNS:
            raise KeyError(name)
        return self.context_matrix[:, CONTEXT_COLUMNS.index(name)]


def update_guard(available: Sequence[bool] | np.ndarray) -> tuple[bool, ...]:
    """Nightly update flags: a full day with at least one available decision time."""
    available = np.asarray(available, dtype=bool)
    T = len(available)
    out = []
    for d in range(n_days(T)):
        end = (d + 1) * SLOTS_PER_DAY
        out.append(end <= T and bool(available[d * SLOTS_PER_DAY:end].any()))
    return tuple(out)


def build_trajectory(user_id: str, rows: Sequence[dict]) -> Trajectory:
    """Assemble a trajectory from per-t dicts, recomputing dosage from actions and B."""
    points = []
    dosage = 0.0
    prev = None
    for t, row in enumerate(rows, start=1):
        if prev is not None:
            dosage = update_dosage(dosage, prev.action or 0, prev.anti_sedentary)
        ctx = row["context"] if isinstance(row["context"], ContextFeatures) else ContextFeatures(**row["context"])
        prev = DecisionPoint(
            t=t,
            available=row["available"],
            context=ctx,
            anti_sedentary=row.get("anti_sedentary", 0),
            dosage=dosage,
            action=row.get("action"),
            action_prob=row.get("action_prob"),
            reward=row.get("reward"),
            missing=row.get("missing", False),
        )
        points.append(prev)
    return Trajectory(user_id, tuple(points))
