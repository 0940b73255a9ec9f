"""Per-state action weights from sampled Q-values.

All functions take ``q_values`` of shape ``(K, N)``: K states, N sampled
actions each. The exponential transform's temperature is found by descending
the convex dual

    g(eta) = eta * eps + eta * mean_j log( mean_i exp(Q_ji / eta) )

whose derivative is computed analytically (see :func:`dual_grad`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

TRANSFORMS = ("exponential", "ranking", "identity")


def _as_q(q_values) -> np.ndarray:
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2:
        raise ValueError("q_values must have shape (K, N)")
    if not np.all(np.isfinite(q)):
        raise ValueError("q_values must be finite")
    return q


@dataclass(frozen=True)
class WeightedBatch:
    states: np.ndarray  # (K, ds)
    actions: np.ndarray  # (K, N, d)
    q_values: np.ndarray  # (K, N)
    weights: np.ndarray  # (K, N)
    distributional: bool = True  # False for the identity transform


@dataclass(frozen=True)
class TemperatureState:
    """Dual temperature plus the Adam moments of its log-space optimizer."""

    eta: float = 1.0
    epsilon: float = 0.1
    eta_min: float = 1e-8
    m: float = 0.0
    v: float = 0.0
    t: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0 and self.eta_min > 0):
            raise ValueError("epsilon and eta_min must be positive")
        if not self.eta >= self.eta_min:
            raise ValueError(f"eta={self.eta} below eta_min={self.eta_min}")


def exp_weights(q_values, eta: float) -> np.ndarray:
    """Row-wise softmax of Q / eta."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    q = _as_q(q_values)
    z = (q - q.max(axis=1, keepdims=True)) / eta
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def _lse_terms(q: np.ndarray, eta: float):
    m = q.max(axis=1, keepdims=True)
    e = np.exp((q - m) / eta)
    s = e.sum(axis=1)
    # log mean_i exp(q/eta), per row
    lme = m[:, 0] / eta + np.log(s) - np.log(q.shape[1])
    return lme, e / s[:, None]


def dual_value(q_values, eta: float, epsilon: float) -> float:
    if not eta > 0:
        raise ValueError("eta must be positive")
    q = _as_q(q_values)
    lme, _ = _lse_terms(q, eta)
    return float(eta * epsilon + eta * lme.mean())


def dual_grad(q_values, eta: float, epsilon: float) -> float:
    """d g / d eta = eps + mean_j [ lme_j - sum_i w_ji Q_ji / eta ]."""
    q = _as_q(q_values)
    lme, w = _lse_terms(q, eta)
    return float(epsilon + np.mean(lme - np.sum(w * q, axis=1) / eta))


def sample_kl(weights) -> np.ndarray:
    """Per-state KL of the weights from the uniform sampling distribution."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log(w * n), 0.0)
    return terms.sum(axis=-1)


class _Dual:
    """Dual value and slope on a fixed, pre-shifted batch."""

    def __init__(self, q: np.ndarray, epsilon: float):
        self.m = q.max(axis=1, keepdims=True)
        self.qm = q - self.m
        self.mean_m = float(self.m.mean())
        self.c = epsilon - np.log(q.shape[1])

    def value(self, eta: float) -> float:
        s = np.exp(self.qm / eta).sum(axis=1)
        return eta * (self.c + float(np.log(s).mean())) + self.mean_m

    def grad(self, eta: float) -> float:
        e = np.exp(self.qm / eta)
        s = e.sum(axis=1)
        return self.c + float(np.mean(np.log(s) - (e * self.qm).sum(axis=1) / (s * eta)))


def solve_eta(q_values, state: TemperatureState, steps: int = 10, step_size: float = 1e-2,
              method: str = "adam", max_backtracks: int = 30) -> TemperatureState:
    """Run ``steps`` first-order updates of ln(eta) on the dual.

    ``method`` is ``"adam"`` (default) or ``"gd"``. A proposed step that
    raises the dual is halved until it does not, so the dual value never
    increases. After each step eta is projected onto ``[eta_min, inf)``.
    """
    if steps < 1 or not step_size > 0:
        raise ValueError("steps and step_size must be positive")
    if method not in ("adam", "gd"):
        raise ValueError(f"unknown method {method!r}")
    dual = _Dual(_as_q(q_values), state.epsilon)
    u_min = np.log(state.eta_min)
    u = np.log(state.eta)
    m, v, t = state.m, state.v, state.t
    b1, b2, guard = 0.9, 0.999, 1e-8
    g_cur = dual.value(np.exp(u))
    for _ in range(steps):
        eta = np.exp(u)
        grad = dual.grad(eta) * eta  # chain rule into log-space
        if method == "adam":
            t += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            delta = -step_size * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + guard)
        else:
            delta = -step_size * grad
        for _ in range(max_backtracks):
            u_new = max(u + delta, u_min)
            g_new = dual.value(np.exp(u_new))
            if g_new <= g_cur:
                u, g_cur = u_new, g_new
                break
            delta *= 0.5
    return replace(state, eta=float(max(np.exp(u), state.eta_min)), m=float(m), v=float(v), t=t)


def rank_weights(q_values, temp: float) -> np.ndarray:
    """Weights proportional to ln((N + temp) / rank), rank 1 = best Q.

    Ties keep the original sample order (stable sort).
    """
    q = _as_q(q_values)
    n = q.shape[1]
    if not temp > 0:
        raise ValueError("temp must be positive")
    raw = np.log((n + temp) / np.arange(1, n + 1))
    if raw[-1] < 0:
        raise ValueError(f"temp={temp} gives a negative weight for rank {n}")
    total = raw.sum()
    if total <= 0:
        raise ValueError("rank weights sum to zero")
    order = np.argsort(-q, axis=1, kind="stable")
    w = np.empty_like(q)
    np.put_along_axis(w, order, np.broadcast_to(raw / total, q.shape), axis=1)
    return w


def identity_weights(q_values) -> np.ndarray:
    """The raw Q-values as weights: rank preserving, not a distribution."""
    return _as_q(q_values).copy()


def compute_weights(q_values, transform: str, temperature: TemperatureState | None = None,
                    rank_temp: float = 10.0, dual_steps: int = 10, dual_lr: float = 1e-2):
    """Weights plus the (possibly updated) temperature state.

    For the exponential transform the weights use the incoming eta and the
    dual is stepped afterwards, so eta is warm-started across batches.
    """
    if transform == "exponential":
        if temperature is None:
            raise ValueError("exponential transform needs a TemperatureState")
        w = exp_weights(q_values, temperature.eta)
        return w, solve_eta(q_values, temperature, dual_steps, dual_lr)
    if transform == "ranking":
        return rank_weights(q_values, rank_temp), temperature
    if transform == "identity":
        return identity_weights(q_values), temperature
    raise ValueError(f"unknown transform {transform!r}")
