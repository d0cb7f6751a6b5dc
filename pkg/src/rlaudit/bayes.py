"""Conjugate Gaussian posterior for the action-centred working model.

theta = (alpha_0, alpha_1, beta) with blocks of size 8, 5, 5. The posterior is
carried in covariance form for the public API; the simulation engine keeps the
precision matrix alongside so that no covariance is ever inverted twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import DIM_F, DIM_G, DIM_PHI, DIM_PHI_TILDE, Trajectory, f_matrix, g_matrix
from .policy import ThresholdPolicy

JITTER = 1e-10
SIGMA2_FLOOR = 1e-6

MU_ALPHA0 = (0.82, 1.95, 3.81, -0.19, 0.76, 0.0, -0.92, 0.0)
MU_BETA = (0.47, 0.0, 0.0, 0.0, 0.0)
SIGMA_ALPHA0 = (14.24, 13.35, 3.24, 0.57, 19.00, 0.26, 17.00, 7.35)
SIGMA_BETA = (4.93, 24.56, 4.95, 0.67, 0.82)

BETA_SLICE = slice(DIM_G + DIM_F, DIM_PHI)


class SingularCovarianceError(np.linalg.LinAlgError):
    def __init__(self, message: str, day: Optional[int] = None):
        super().__init__(message if day is None else f"day {day}: {message}")
        self.day = day


@dataclass(frozen=True)
class Prior:
    mu_alpha0: np.ndarray
    mu_beta: np.ndarray
    sigma_alpha0: np.ndarray
    sigma_beta: np.ndarray
    noise_var: float = 1.0

    def __post_init__(self):
        for name, size in (("mu_alpha0", DIM_G), ("mu_beta", DIM_F)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        for name, size in (("sigma_alpha0", DIM_G), ("sigma_beta", DIM_F)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = np.diag(arr)
            if arr.shape != (size, size):
                raise ValueError(f"{name} must be {size}x{size}, got {arr.shape}")
            if not np.allclose(arr, arr.T, atol=0, rtol=0) or np.any(np.linalg.eigvalsh(arr) <= 0):
                raise ValueError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, arr)
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @property
    def mu0(self) -> np.ndarray:
        return np.concatenate([self.mu_alpha0, self.mu_beta, self.mu_beta])

    @property
    def sigma0(self) -> np.ndarray:
        out = np.zeros((DIM_PHI, DIM_PHI))
        out[:DIM_G, :DIM_G] = self.sigma_alpha0
        out[DIM_G:DIM_G + DIM_F, DIM_G:DIM_G + DIM_F] = self.sigma_beta
        out[BETA_SLICE, BETA_SLICE] = self.sigma_beta
        return out

    @property
    def ridge_mean(self) -> np.ndarray:
        return np.concatenate([self.mu_alpha0, self.mu_beta])

    @property
    def ridge_cov(self) -> np.ndarray:
        out = np.zeros((DIM_PHI_TILDE, DIM_PHI_TILDE))
        out[:DIM_G, :DIM_G] = self.sigma_alpha0
        out[DIM_G:, DIM_G:] = self.sigma_beta
        return out


def make_default_prior(noise_var: float = 1.0) -> Prior:
    return Prior(np.array(MU_ALPHA0), np.array(MU_BETA), np.array(SIGMA_ALPHA0),
                 np.array(SIGMA_BETA), noise_var=noise_var)


@dataclass(frozen=True)
class PosteriorState:
    day: int
    mu: np.ndarray
    sigma: np.ndarray
    eta: ThresholdPolicy = field(default_factory=ThresholdPolicy)

    @classmethod
    def from_prior(cls, prior: Prior, eta: Optional[ThresholdPolicy] = None) -> "PosteriorState":
        return cls(0, prior.mu0, prior.sigma0, eta or ThresholdPolicy())


def _cholesky(mat: np.ndarray, day: Optional[int] = None) -> np.ndarray:
    """Batched Cholesky with a single jitter retry per failing matrix."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    flat = mat.reshape(-1, *mat.shape[-2:])
    out = np.empty_like(flat)
    eye = np.eye(mat.shape[-1])
    for i, m in enumerate(flat):
        try:
            out[i] = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            try:
                out[i] = np.linalg.cholesky(m + JITTER * eye)
            except np.linalg.LinAlgError:
                raise SingularCovarianceError("matrix is not positive definite", day) from None
    return out.reshape(mat.shape)


def spd_inverse(mat: np.ndarray, day: Optional[int] = None) -> np.ndarray:
    """Inverse of a (batch of) symmetric PD matrices, symmetrised."""
    chol_inv = np.linalg.inv(_cholesky(mat, day))
    inv = np.swapaxes(chol_inv, -1, -2) @ chol_inv
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def moments_from_precision(precision: np.ndarray, info: np.ndarray, day: Optional[int] = None):
    """(mu, sigma) from precision P and information vector h = P mu."""
    sigma = spd_inverse(precision, day)
    mu = np.einsum("...ij,...j->...i", sigma, info)
    return mu, sigma


def accumulate(precision, info, phi, reward, weight, sigma2):
    """Add one batch of weighted observations to (P, h).

    phi: (..., k, 18); reward: (..., k); weight: (k,) or (..., k). Rows with
    zero weight may carry NaN rewards.
    """
    w = np.asarray(weight, dtype=float)
    r = np.where(w > 0, reward, 0.0)
    wphi = phi * (w[..., None] / sigma2)
    precision = precision + np.swapaxes(wphi, -1, -2) @ phi
    info = info + np.einsum("...ki,...k->...i", wphi, r)
    return precision, info


def posterior_update(state: PosteriorState, prior: Prior,
                     day_batch: Sequence[tuple], sigma2: Optional[float] = None) -> PosteriorState:
    """One nightly update from a day's (phi, reward, available) triples.

    A reward of None marks a missing observation and is left out, as are
    unavailable rows. A NaN reward on an available row is an error.
    """
    sigma2 = prior.noise_var if sigma2 is None else sigma2
    rows, rewards, weights = [], [], []
    for phi, reward, available in day_batch:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (DIM_PHI,):
            raise ValueError(f"phi must have {DIM_PHI} entries, got {phi.shape}")
        missing = reward is None
        if available and not missing and not np.isfinite(reward):
            raise ValueError(f"day {state.day + 1}: reward is not finite")
        rows.append(phi)
        rewards.append(np.nan if missing else float(reward))
        weights.append(float(bool(available) and not missing))
    next_day = state.day + 1
    if not any(weights):
        return replace(state, day=next_day)
    precision = spd_inverse(state.sigma, next_day)
    info = precision @ state.mu
    precision, info = accumulate(precision, info, np.array(rows), np.array(rewards),
                                 np.array(weights), sigma2)
    mu, sigma = moments_from_precision(precision, info, next_day)
    return PosteriorState(next_day, mu, sigma, state.eta)


def beta_marginal(state: PosteriorState) -> tuple[np.ndarray, np.ndarray]:
    return state.mu[BETA_SLICE].copy(), state.sigma[BETA_SLICE, BETA_SLICE].copy()


@dataclass(frozen=True)
class RewardFit:
    alpha: np.ndarray
    beta: np.ndarray
    sigma2: float
    n_used: int
    residual_mean: float
    residual_sd: float

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])


def design_tilde(traj: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """phi_tilde rows, rewards and usable mask for a trajectory."""
    ctx, dose = traj.context_matrix, traj.dosage_array
    f = f_matrix(ctx, dose)
    phi = np.concatenate([g_matrix(ctx, dose), traj.action_array[:, None] * f], axis=1)
    return phi, traj.reward_array, traj.usable_array


def _ridge(phi, reward, prior: Prior, sigma2: float) -> np.ndarray:
    prec0 = spd_inverse(prior.ridge_cov)
    lhs = phi.T @ phi / sigma2 + prec0
    rhs = phi.T @ reward / sigma2 + prec0 @ prior.ridge_mean
    chol = _cholesky(lhs)
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def fit_reward_model(traj: Trajectory, prior: Prior, sigma2: Optional[float] = None) -> RewardFit:
    """Penalised least squares of rewards on phi_tilde, prior blocks as the penalty.

    With ``sigma2`` unset, a pilot fit at unit noise variance supplies the
    residual variance (floored at 1e-6) used for the final fit.
    """
    phi, reward, usable = design_tilde(traj)
    phi, reward = phi[usable], reward[usable]
    if len(reward) == 0:
        raise ValueError(f"user {traj.user_id}: no available, non-missing decision times to fit")
    if sigma2 is None:
        pilot = _ridge(phi, reward, prior, 1.0)
        sigma2 = max(float(np.mean((reward - phi @ pilot) ** 2)), SIGMA2_FLOOR)
    coef = _ridge(phi, reward, prior, sigma2)
    resid = reward - phi @ coef
    return RewardFit(coef[:DIM_G], coef[DIM_G:], float(sigma2), int(len(reward)),
                     float(resid.mean()), float(resid.std()))
