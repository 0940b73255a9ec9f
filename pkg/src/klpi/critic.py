"""Policy evaluation: one-step TD with a periodically synced target network.

The critic is any :class:`~klpi.approx.NetSpec` applied to a feature vector
of ``(s, a)``; by default the features are the concatenation ``[s, a]``.
``exact_q_tabular`` solves the Bellman equation of a finite MDP directly and
is used to check the TD learner.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .approx import AdamState, NetSpec, backward, forward, opt_step


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        if not np.isfinite(self.r):
            raise ValueError("reward must be finite")


@dataclass(frozen=True)
class TransitionBatch:
    s: np.ndarray  # (B, ds)
    a: np.ndarray  # (B, da)
    r: np.ndarray  # (B,)
    s_next: np.ndarray  # (B, ds)
    terminal: np.ndarray  # (B,) bool

    @classmethod
    def stack(cls, transitions) -> "TransitionBatch":
        ts = list(transitions)
        if not ts:
            raise ValueError("empty batch")
        return cls(np.array([t.s for t in ts], dtype=np.float64),
                   np.array([t.a for t in ts], dtype=np.float64),
                   np.array([t.r for t in ts], dtype=np.float64),
                   np.array([t.s_next for t in ts], dtype=np.float64),
                   np.array([t.terminal for t in ts], dtype=bool))

    def __len__(self):
        return self.r.shape[0]


def concat_features(s, a):
    return np.concatenate([s, a], axis=-1)


@dataclass(frozen=True)
class CriticPair:
    spec: NetSpec
    params: np.ndarray
    target_params: np.ndarray
    opt: AdamState
    target_period: int = 250
    steps_since_sync: int = 0
    features: Callable = concat_features

    @classmethod
    def create(cls, spec: NetSpec, params: np.ndarray, lr: float = 3e-4, target_period: int = 250,
               features: Callable = concat_features) -> "CriticPair":
        if target_period < 1:
            raise ValueError("target_period must be >= 1")
        return cls(spec, params.copy(), params.copy(), AdamState.zeros(params.size, lr),
                   target_period, 0, features)

    def q(self, s, a, target: bool = False) -> np.ndarray:
        p = self.target_params if target else self.params
        return forward(self.spec, p, self.features(s, a))[0][..., 0]


def _as_batch(batch) -> TransitionBatch:
    if isinstance(batch, TransitionBatch):
        if len(batch) == 0:
            raise ValueError("empty batch")
        return batch
    return TransitionBatch.stack(batch)


def td_targets(pair: CriticPair, next_action: Callable, batch: TransitionBatch, gamma: float,
               rng: np.random.Generator, samples: int = 1) -> np.ndarray:
    """y = r + gamma * (1 - terminal) * mean_m Q_target(s', a'_m), a'_m ~ next_action."""
    boot = np.zeros(len(batch))
    for _ in range(samples):
        a_next = next_action(batch.s_next, rng)
        boot += pair.q(batch.s_next, a_next, target=True)
    boot /= samples
    return batch.r + gamma * np.where(batch.terminal, 0.0, boot)


def td_loss_grad(pair: CriticPair, next_action: Callable, batch, gamma: float,
                 rng: np.random.Generator, samples: int = 1):
    """Mean squared TD error and its gradient w.r.t. the live critic params.

    ``next_action(states, rng)`` samples one bootstrap action per state from
    the policy's target snapshot. The target ``y`` is treated as a constant.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    b = _as_batch(batch)
    y = td_targets(pair, next_action, b, gamma, rng, samples)
    out, cache = forward(pair.spec, pair.params, pair.features(b.s, b.a))
    diff = out[:, 0] - y
    loss = float(np.mean(diff * diff))
    g_out = (2.0 / len(b)) * diff[:, None]
    grad, _ = backward(pair.spec, pair.params, cache, g_out)
    return loss, grad


def sync_target(pair: CriticPair) -> CriticPair:
    return replace(pair, target_params=pair.params.copy(), steps_since_sync=0)


def td_update(pair: CriticPair, next_action: Callable, batch, gamma: float,
              rng: np.random.Generator, samples: int = 1) -> tuple[CriticPair, float]:
    """One Adam step on the TD loss, then a target sync every ``target_period`` steps."""
    loss, grad = td_loss_grad(pair, next_action, batch, gamma, rng, samples)
    opt, params = opt_step(pair.opt, pair.params, grad)
    pair = replace(pair, params=params, opt=opt, steps_since_sync=pair.steps_since_sync + 1)
    if pair.steps_since_sync >= pair.target_period:
        pair = sync_target(pair)
    return pair, loss


def exact_q_tabular(transitions, rewards, policy, gamma: float) -> np.ndarray:
    """Solve Q = R + gamma * P Pi Q exactly.

    ``transitions[s, a, s']`` are next-state probabilities, ``rewards[s, a]``
    expected rewards and ``policy[s, a]`` action probabilities.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    p = np.asarray(transitions, dtype=np.float64)
    r = np.asarray(rewards, dtype=np.float64)
    pi = np.asarray(policy, dtype=np.float64)
    ns, na = r.shape
    if p.shape != (ns, na, ns) or pi.shape != (ns, na):
        raise ValueError("inconsistent MDP shapes")
    # M[(s,a), (s',a')] = P[s,a,s'] * pi[s',a']
    m = (p[:, :, :, None] * pi[None, None, :, :]).reshape(ns * na, ns * na)
    q = np.linalg.solve(np.eye(ns * na) - gamma * m, r.reshape(-1))
    return q.reshape(ns, na)
