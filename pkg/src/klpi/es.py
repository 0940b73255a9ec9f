"""State-free interpolation updates of a Gaussian search distribution.

With the mean and covariance as the only parameters and soft KL penalties,
the decoupled weighted-likelihood fit has a closed form::

    mu_new  = (1 - rate_mean) mu_old  + rate_mean * sum_i w_i a_i
    cov_new = (1 - rate_cov)  cov_old + rate_cov  * sum_i w_i (a_i - mu_old)(a_i - mu_old)^T

The rank update is centred on the *old* mean. With ``rate_mean = 1`` the
mean step is the usual weighted recombination of CMA-ES.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .weighting import TemperatureState, compute_weights, exp_weights, solve_eta

COV_FLOOR = 1e-12


@dataclass(frozen=True)
class BanditGaussian:
    mean: np.ndarray
    cov: np.ndarray  # (d,) diagonal or (d, d) full
    full: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        d = mean.shape[0]
        if self.full:
            if cov.shape != (d, d) or not np.allclose(cov, cov.T):
                raise ValueError("full covariance must be a symmetric (d, d) matrix")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise ValueError("covariance must be positive definite")
        else:
            if cov.shape != (d,) or np.any(cov <= 0):
                raise ValueError("diagonal covariance must be a positive (d,) vector")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def isotropic(cls, mean, std: float, full: bool = False) -> "BanditGaussian":
        mean = np.asarray(mean, dtype=np.float64)
        d = mean.shape[0]
        return cls(mean, np.eye(d) * std ** 2 if full else np.full(d, std ** 2), full)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov_matrix(self) -> np.ndarray:
        return self.cov if self.full else np.diag(self.cov)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((count, self.dim))
        if self.full:
            return self.mean + z @ np.linalg.cholesky(self.cov).T
        return self.mean + z * np.sqrt(self.cov)

    def entropy(self) -> float:
        _, logdet = np.linalg.slogdet(self.cov_matrix)
        return 0.5 * self.dim * (1.0 + np.log(2.0 * np.pi)) + 0.5 * logdet

    def mean_std(self) -> float:
        return float(np.mean(np.sqrt(np.diag(self.cov_matrix))))


@dataclass(frozen=True)
class InterpolationRates:
    rate_mean: float = 0.5
    rate_cov: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.rate_mean <= 1.0 and 0.0 <= self.rate_cov <= 1.0):
            raise ValueError("interpolation rates must lie in [0, 1]")


def es_update(dist: BanditGaussian, samples, weights, rates: InterpolationRates) -> BanditGaussian:
    a = np.asarray(samples, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != dist.dim or a.shape[0] != w.shape[0]:
        raise ValueError("samples must be (M, d) with one weight each")
    if a.shape[0] < 2:
        raise ValueError("need at least two samples")
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-10):
        raise ValueError("weights must be non-negative and sum to 1")
    mean = (1.0 - rates.rate_mean) * dist.mean + rates.rate_mean * (w @ a)
    dev = a - dist.mean
    if dist.full:
        scatter = (w[:, None] * dev).T @ dev
        cov = (1.0 - rates.rate_cov) * dist.cov + rates.rate_cov * scatter
        cov = 0.5 * (cov + cov.T)
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < COV_FLOOR:
            cov = (evecs * np.maximum(evals, COV_FLOOR)) @ evecs.T
            cov = 0.5 * (cov + cov.T)
    else:
        scatter = w @ (dev * dev)
        cov = np.maximum((1.0 - rates.rate_cov) * dist.cov + rates.rate_cov * scatter, COV_FLOOR)
    return BanditGaussian(mean, cov, dist.full)


def gaussian_kl(old: BanditGaussian, new: BanditGaussian) -> tuple[float, float]:
    """KL(old || new) split as (mean part with new covariance, covariance part)."""
    c_old, c_new = old.cov_matrix, new.cov_matrix
    inv_new = np.linalg.inv(c_new)
    d = old.dim
    dm = new.mean - old.mean
    _, ld_old = np.linalg.slogdet(c_old)
    _, ld_new = np.linalg.slogdet(c_new)
    cov_part = 0.5 * (np.trace(inv_new @ c_old) - d + ld_new - ld_old)
    return float(0.5 * dm @ inv_new @ dm), float(cov_part)


@dataclass(frozen=True)
class BanditRecord:
    iteration: int
    best_value: float
    mean: np.ndarray
    entropy: float
    mean_std: float
    mean_value: float
    kl_mean: float
    kl_cov: float
    eta: float


def bandit_optimize(objective: Callable, init: BanditGaussian, transform: str = "exponential",
                    rates: InterpolationRates = InterpolationRates(), iters: int = 500,
                    rng: np.random.Generator | None = None, samples: int = 20,
                    epsilon: float = 0.1, rank_temp: float = 10.0, dual_steps: int = 50,
                    dual_lr: float = 1e-1, callback: Callable | None = None) -> list[BanditRecord]:
    """Sample, weight, interpolate; one record per iteration (record 0 is the start).

    ``objective`` maps an ``(M, d)`` array of candidates to ``M`` values to be
    maximized. For the exponential transform the temperature is tuned on each
    batch before weighting.
    """
    rng = np.random.default_rng() if rng is None else rng
    dist = init
    temp = TemperatureState(eta=1.0, epsilon=epsilon)
    best = float(np.asarray(objective(dist.mean[None, :]))[0])
    trace = [BanditRecord(0, best, dist.mean.copy(), dist.entropy(), dist.mean_std(), best,
                          0.0, 0.0, temp.eta)]
    if callback is not None:
        callback(trace[-1])
    for it in range(1, iters + 1):
        cand = dist.sample(samples, rng)
        vals = np.asarray(objective(cand), dtype=np.float64)
        if vals.shape != (samples,):
            raise ValueError("objective must return one value per candidate")
        best = max(best, float(vals.max()))
        if transform == "exponential":
            temp = solve_eta(vals[None, :], temp, dual_steps, dual_lr)
            w = exp_weights(vals[None, :], temp.eta)
        else:
            w, _ = compute_weights(vals[None, :], transform, rank_temp=rank_temp)
        new = es_update(dist, cand, w[0], rates)
        klm, klc = gaussian_kl(dist, new)
        dist = new
        mean_val = float(np.asarray(objective(dist.mean[None, :]))[0])
        best = max(best, mean_val)
        trace.append(BanditRecord(it, best, dist.mean.copy(), dist.entropy(), dist.mean_std(),
                                  mean_val, klm, klc, temp.eta))
        if callback is not None:
            callback(trace[-1])
    return trace
