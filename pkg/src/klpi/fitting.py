"""Weighted maximum-likelihood policy fitting under KL trust regions.

The policy network maps a state to ``2 * d`` outputs split as
``[mean | chol_raw]``. Both fitting variants maximize a Lagrangian over the
network parameters with one Adam step per batch, after one Adam step on the
softplus-parameterized multipliers.

Decoupled variant, per state ``j`` with target-network head ``(mu_k, a_k)``::

    sum_i q_ji [ log N(a_ji; mu_theta, a_k) + log N(a_ji; mu_k, a_theta) ]
      + alpha_mean (eps_mean - KL_mean) + alpha_cov (eps_cov - KL_cov)

so the first likelihood term only moves the mean outputs and the second only
the ``chol_raw`` outputs. The likelihood sums are divided by ``K * N``; the KL
terms are averaged over the K states. An infinite bound switches its
constraint off (multiplier pinned to zero).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .approx import AdamState, NetSpec, backward, forward, init_params, opt_step
from .gauss import GaussianHead, kl, kl_cov, kl_mean, sigmoid, softplus, softplus_inv


class NonFiniteError(FloatingPointError):
    """Raised when a loss or metric stops being finite."""


# ---------------------------------------------------------------- policy net

def policy_spec(state_dim: int, action_dim: int, hidden=(50, 50), activation: str = "elu",
                layer_norm_first: bool = False, layer_norm_tanh: bool = False) -> NetSpec:
    return NetSpec(state_dim, tuple(hidden), 2 * action_dim, activation,
                   layer_norm_first, layer_norm_tanh)


def init_policy(spec: NetSpec, rng: np.random.Generator, init_std: float = 0.3) -> np.ndarray:
    """Glorot init with the chol_raw output bias set so that stddev is ~init_std."""
    params = init_params(spec, rng)
    d = spec.output_dim // 2
    bias = params[spec.num_params - spec.output_dim:]
    bias[d:] = softplus_inv(init_std)
    return params


def policy_forward(spec: NetSpec, params: np.ndarray, states):
    """Batched heads for ``states`` plus the forward cache."""
    out, cache = forward(spec, params, np.atleast_2d(states))
    d = spec.output_dim // 2
    return GaussianHead(out[:, :d], out[:, d:]), cache


def policy_heads(spec: NetSpec, params: np.ndarray, states) -> GaussianHead:
    return policy_forward(spec, params, states)[0]


# ---------------------------------------------------------------- bounds / multipliers

@dataclass(frozen=True)
class KlBounds:
    eps_mean: float = 5.0
    eps_cov: float = 1e-3
    coupled_eps: float | None = None

    def __post_init__(self):
        vals = [self.eps_mean, self.eps_cov] + ([] if self.coupled_eps is None else [self.coupled_eps])
        if not all(v > 0 for v in vals):
            raise ValueError("KL bounds must be positive")


@dataclass(frozen=True)
class MultiplierState:
    """Raw multipliers ``[mean, cov, coupled]``; effective value is softplus(raw)."""

    raw: np.ndarray
    opt: AdamState

    @classmethod
    def create(cls, init: float = 1.0, lr: float = 1e-3) -> "MultiplierState":
        raw = np.full(3, float(softplus_inv(init)))
        return cls(raw, AdamState.zeros(3, lr))

    @property
    def alpha_mean(self) -> float:
        return float(softplus(self.raw[0]))

    @property
    def alpha_cov(self) -> float:
        return float(softplus(self.raw[1]))

    @property
    def alpha_coupled(self) -> float:
        return float(softplus(self.raw[2]))


def _effective(mult: MultiplierState, bounds_vec: np.ndarray) -> np.ndarray:
    alphas = softplus(mult.raw)
    return np.where(np.isfinite(bounds_vec), alphas, 0.0)


def _bounds_vec(bounds: KlBounds) -> np.ndarray:
    c = np.inf if bounds.coupled_eps is None else bounds.coupled_eps
    return np.array([bounds.eps_mean, bounds.eps_cov, c], dtype=np.float64)


def multiplier_update(mult: MultiplierState, kls, bounds: KlBounds, active=(True, True, False),
                      lr: float | None = None) -> MultiplierState:
    """One Adam descent step on the raw multipliers.

    ``kls`` is ``(kl_mean, kl_cov, kl_coupled)``; only ``active`` entries with
    a finite bound move. dL/d alpha = eps - KL, so alpha grows while the KL
    exceeds its bound and shrinks otherwise.
    """
    kls = np.asarray(kls, dtype=np.float64)
    if np.any(kls < 0):
        raise ValueError("KL values must be non-negative")
    eps = _bounds_vec(bounds)
    mask = np.asarray(active, dtype=bool) & np.isfinite(eps)
    grad = np.where(mask, (np.where(mask, eps, 0.0) - kls) * sigmoid(mult.raw), 0.0)
    opt = mult.opt if lr is None else replace(mult.opt, lr=lr)
    new_opt, raw = opt_step(opt, mult.raw, grad)
    # frozen entries must not drift through stale moments
    raw = np.where(mask, raw, mult.raw)
    return MultiplierState(raw, new_opt)


# ---------------------------------------------------------------- objectives

def decoupled_terms(mean, raw, tgt: GaussianHead, actions, weights):
    """Values and output-gradients of the decoupled objective pieces.

    ``actions`` is ``(K, N, d)``, ``weights`` ``(K, N)``. Returns a dict with
    the two likelihood terms (normalized by K*N), the batch-mean KLs and their
    gradients w.r.t. the mean and chol_raw outputs.
    """
    k, n, _ = actions.shape
    c = 1.0 / (k * n)
    a = softplus(raw)
    da_draw = sigmoid(raw)
    mk, ak = tgt.mean, tgt.std
    w = weights[:, :, None]

    # mean term: log N(x; mu_theta, a_k)
    dx = actions - mean[:, None, :]
    zm = dx / ak[:, None, :]
    lm_each = np.sum(-0.5 * zm * zm - np.log(ak)[:, None, :], axis=-1)
    loglik_mean = c * np.sum(weights * lm_each)
    g_lm_mean = c * np.sum(w * dx, axis=1) / ak ** 2

    # cov term: log N(x; mu_k, a_theta)
    dk = actions - mk[:, None, :]
    zc = dk / a[:, None, :]
    lc_each = np.sum(-0.5 * zc * zc - np.log(a)[:, None, :], axis=-1)
    loglik_cov = c * np.sum(weights * lc_each)
    sw = np.sum(weights, axis=1)[:, None]
    g_lc_a = c * (np.sum(w * dk * dk, axis=1) / a ** 3 - sw / a)
    g_lc_raw = g_lc_a * da_draw

    kl_m_each = 0.5 * np.sum(((mean - mk) / ak) ** 2, axis=-1)
    g_klm_mean = (mean - mk) / ak ** 2 / k
    r = ak / a
    kl_c_each = 0.5 * np.sum(r * r - 1.0 - 2.0 * np.log(r), axis=-1)
    g_klc_raw = (1.0 / a - ak ** 2 / a ** 3) * da_draw / k

    return {
        "loglik_mean": float(loglik_mean),
        "loglik_cov": float(loglik_cov),
        "kl_mean": float(kl_m_each.mean()),
        "kl_cov": float(kl_c_each.mean()),
        "g_loglik_mean": g_lm_mean,
        "g_loglik_cov": g_lc_raw,
        "g_kl_mean": g_klm_mean,
        "g_kl_cov": g_klc_raw,
    }


def coupled_terms(mean, raw, tgt: GaussianHead, actions, weights):
    """Plain weighted log-likelihood and full KL(target || theta), with output gradients."""
    k, n, _ = actions.shape
    c = 1.0 / (k * n)
    a = softplus(raw)
    da_draw = sigmoid(raw)
    w = weights[:, :, None]
    dx = actions - mean[:, None, :]
    z = dx / a[:, None, :]
    ll_each = np.sum(-0.5 * z * z - np.log(a)[:, None, :], axis=-1)
    loglik = c * np.sum(weights * ll_each)
    sw = np.sum(weights, axis=1)[:, None]
    g_ll_mean = c * np.sum(w * dx, axis=1) / a ** 2
    g_ll_raw = c * (np.sum(w * dx * dx, axis=1) / a ** 3 - sw / a) * da_draw

    mk, ak = tgt.mean, tgt.std
    dm = mean - mk
    r = ak / a
    kl_c_each = 0.5 * np.sum(r * r - 1.0 - 2.0 * np.log(r), axis=-1)
    kl_m_each = 0.5 * np.sum((dm / a) ** 2, axis=-1)
    g_kl_mean = dm / a ** 2 / k
    g_kl_raw = (1.0 / a - ak ** 2 / a ** 3 - dm ** 2 / a ** 3) * da_draw / k
    return {
        "loglik": float(loglik),
        "kl": float((kl_c_each + kl_m_each).mean()),
        "g_loglik_mean": g_ll_mean,
        "g_loglik_raw": g_ll_raw,
        "g_kl_mean": g_kl_mean,
        "g_kl_raw": g_kl_raw,
    }


def _constraint(alpha: float, eps: float, kl: float) -> float:
    return 0.0 if not np.isfinite(eps) else alpha * (eps - kl)


def lagrangian(spec: NetSpec, params, tgt: GaussianHead, states, actions, weights,
               bounds: KlBounds, alphas, decoupled: bool = True):
    """Lagrangian value, its gradient w.r.t. ``params`` and diagnostics.

    ``alphas`` are the effective multipliers ``(mean, cov, coupled)``.
    """
    heads, cache = policy_forward(spec, params, states)
    mean, raw = heads.mean, heads.chol_raw
    d = mean.shape[1]
    eps = _bounds_vec(bounds)
    # an infinite bound switches its constraint off in both value and gradient
    am, ac, ap = np.where(np.isfinite(eps), np.asarray(alphas, dtype=np.float64), 0.0)
    if decoupled:
        t = decoupled_terms(mean, raw, tgt, actions, weights)
        value = (t["loglik_mean"] + t["loglik_cov"] + _constraint(am, eps[0], t["kl_mean"])
                 + _constraint(ac, eps[1], t["kl_cov"]))
        g_out = np.empty((mean.shape[0], 2 * d))
        g_out[:, :d] = t["g_loglik_mean"] - am * t["g_kl_mean"]
        g_out[:, d:] = t["g_loglik_cov"] - ac * t["g_kl_cov"]
        info = {"loglik": t["loglik_mean"] + t["loglik_cov"], "kl_mean": t["kl_mean"],
                "kl_cov": t["kl_cov"], "kl": t["kl_mean"] + t["kl_cov"]}
    else:
        t = coupled_terms(mean, raw, tgt, actions, weights)
        value = t["loglik"] + _constraint(ap, eps[2], t["kl"])
        g_out = np.empty((mean.shape[0], 2 * d))
        g_out[:, :d] = t["g_loglik_mean"] - ap * t["g_kl_mean"]
        g_out[:, d:] = t["g_loglik_raw"] - ap * t["g_kl_raw"]
        a = heads.std
        info = {"loglik": t["loglik"], "kl": t["kl"],
                "kl_mean": float(np.mean(0.5 * np.sum(((mean - tgt.mean) / tgt.std) ** 2, -1))),
                "kl_cov": float(np.mean(0.5 * np.sum((tgt.std / a) ** 2 - 1 - 2 * np.log(tgt.std / a), -1)))}
    grad, _ = backward(spec, params, cache, g_out)
    return float(value), grad, info


def _checked_heads(spec, params, states) -> GaussianHead:
    try:
        heads = policy_heads(spec, params, states)
    except ValueError as exc:  # non-finite network output
        raise NonFiniteError(str(exc)) from exc
    if not np.all(heads.std > 0):
        raise NonFiniteError("policy stddev underflowed to zero")
    return heads


def _fit_step(spec, params, target_params, batch, bounds, mult, opt, decoupled):
    states = batch.states
    tgt = _checked_heads(spec, target_params, states)
    # inner minimization: multipliers at the current parameters
    _, _, pre = lagrangian(spec, params, tgt, states, batch.actions, batch.weights, bounds,
                           _effective(mult, _bounds_vec(bounds)), decoupled)
    kls = (pre["kl_mean"], pre["kl_cov"], pre["kl"])
    active = (True, True, False) if decoupled else (False, False, True)
    mult = multiplier_update(mult, kls, bounds, active)
    alphas = _effective(mult, _bounds_vec(bounds))
    if not decoupled:
        alphas = np.array([0.0, 0.0, alphas[2]])
    # outer maximization: one ascent step on the network
    value, grad, info = lagrangian(spec, params, tgt, states, batch.actions, batch.weights,
                                   bounds, alphas, decoupled)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteError(f"non-finite Lagrangian value={value}")
    opt, params = opt_step(opt, params, grad, maximize=True)
    if not np.all(np.isfinite(params)):
        raise NonFiniteError("non-finite policy parameters after the update")
    # observed KLs: how far the updated policy has moved from the target
    post = _checked_heads(spec, params, states)
    metrics = {"lagrangian": value, "loglik": info["loglik"],
               "kl_mean": float(np.mean(kl_mean(tgt, post.mean))),
               "kl_cov": float(np.mean(kl_cov(tgt, post.std))),
               "kl": float(np.mean(kl(tgt, post))),
               "kl_mean_pre": info["kl_mean"], "kl_cov_pre": info["kl_cov"], "kl_pre": info["kl"],
               "alpha_mean": float(alphas[0] if decoupled else alphas[2]),
               "alpha_cov": float(alphas[1])}
    return params, mult, opt, metrics


def fit_step_decoupled(spec: NetSpec, params, target_params, batch, bounds: KlBounds,
                       mult: MultiplierState, opt: AdamState):
    """One multiplier step then one parameter step on the decoupled Lagrangian."""
    return _fit_step(spec, params, target_params, batch, bounds, mult, opt, True)


def fit_step_coupled(spec: NetSpec, params, target_params, batch, bounds: KlBounds,
                     mult: MultiplierState, opt: AdamState):
    """Same as :func:`fit_step_decoupled` with one full-Gaussian KL constraint."""
    if bounds.coupled_eps is None:
        raise ValueError("coupled fitting needs bounds.coupled_eps (use inf to disable)")
    return _fit_step(spec, params, target_params, batch, bounds, mult, opt, False)
