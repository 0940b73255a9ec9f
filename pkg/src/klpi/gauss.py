"""Diagonal Gaussian policy heads.

A head stores the mean and the *pre-softplus* diagonal Cholesky factors, so
any real vector is a valid parameterization. All densities are natural-log.
Heads may be batched: ``mean`` and ``chol_raw`` of shape ``(..., d)``
describe one Gaussian per leading index (one per state in a batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def softplus(x):
    """ln(1 + exp(x)), overflow-safe."""
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for y > 0, i.e. ln(exp(y) - 1)."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inv needs strictly positive input")
    # ln(e^y - 1) = y + ln(1 - e^-y); expm1 keeps small y accurate
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass(frozen=True)
class GaussianHead:
    mean: np.ndarray
    chol_raw: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        raw = np.asarray(self.chol_raw, dtype=np.float64)
        if mean.ndim == 0 or mean.shape[-1] < 1:
            raise ValueError("action dimension must be >= 1")
        if mean.shape != raw.shape:
            raise ValueError(f"mean shape {mean.shape} != chol_raw shape {raw.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(raw))):
            raise ValueError("head parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol_raw", raw)

    @classmethod
    def from_std(cls, mean, std) -> "GaussianHead":
        mean = np.asarray(mean, dtype=np.float64)
        std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape)
        return cls(mean, softplus_inv(std))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> np.ndarray:
        """Effective diagonal Cholesky factors a_ii = softplus(chol_raw_i)."""
        return softplus(self.chol_raw)

    @property
    def cov(self) -> np.ndarray:
        return self.std ** 2


@dataclass(frozen=True)
class ActionSample:
    action: np.ndarray
    log_prob: float


def _check_dim(head: GaussianHead, x: np.ndarray) -> None:
    if x.shape[-1] != head.dim:
        raise ValueError(f"expected last dimension {head.dim}, got {x.shape[-1]}")


def sample_actions(head: GaussianHead, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` actions per head; returns shape ``(count, *head.mean.shape)``."""
    if count < 1:
        raise ValueError("count must be positive")
    z = rng.standard_normal((count,) + head.mean.shape)
    return head.mean + head.std * z


def sample(head: GaussianHead, count: int, rng: np.random.Generator) -> list[ActionSample]:
    """Unbatched sampling that also reports each sample's log-density."""
    if head.mean.ndim != 1:
        raise ValueError("sample() expects an unbatched head; use sample_actions")
    actions = sample_actions(head, count, rng)
    logp = log_density(head, actions)
    return [ActionSample(a, float(lp)) for a, lp in zip(actions, logp)]


def log_density(head: GaussianHead, action) -> np.ndarray:
    """Log-density of ``action`` (broadcast against the head's batch shape)."""
    x = np.asarray(action, dtype=np.float64)
    _check_dim(head, x)
    a = head.std
    z = (x - head.mean) / a
    return np.sum(-0.5 * z * z - np.log(a), axis=-1) - 0.5 * head.dim * LOG_2PI


def kl_mean(old: GaussianHead, new_mean) -> np.ndarray:
    """KL(old || N(new_mean, old covariance))."""
    new_mean = np.asarray(new_mean, dtype=np.float64)
    _check_dim(old, new_mean)
    z = (new_mean - old.mean) / old.std
    return 0.5 * np.sum(z * z, axis=-1)


def kl_cov(old: GaussianHead, new_chol) -> np.ndarray:
    """KL(old || N(old mean, diag(new_chol**2)))."""
    new_chol = np.asarray(new_chol, dtype=np.float64)
    _check_dim(old, new_chol)
    if np.any(new_chol <= 0):
        raise ValueError("new_chol must be strictly positive")
    r = old.std / new_chol
    return 0.5 * np.sum(r * r - 1.0 - 2.0 * np.log(r), axis=-1)


def kl(old: GaussianHead, new: GaussianHead) -> np.ndarray:
    """Full KL(old || new) between diagonal Gaussians."""
    z = (new.mean - old.mean) / new.std
    return kl_cov(old, new.std) + 0.5 * np.sum(z * z, axis=-1)


def entropy(head: GaussianHead) -> np.ndarray:
    return 0.5 * head.dim * (1.0 + LOG_2PI) + np.sum(np.log(head.std), axis=-1)
