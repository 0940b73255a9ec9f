"""Benchmark tasks: stateful oracle functions, a point-mass task, small
tabular MDPs, and a uniform replay buffer.

Oracle tasks shift a standard function by the state, ``y = a + s``, so the
exact Q-function is known in closed form. States are drawn uniformly from
``[-2, 2]^d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .critic import Transition, TransitionBatch

STATE_LOW, STATE_HIGH = -2.0, 2.0


def _pair(s, a):
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape[-1] != a.shape[-1]:
        raise ValueError(f"state dim {s.shape[-1]} != action dim {a.shape[-1]}")
    return s, a


def sphere_q(s, a):
    """-sum (a + s)^2; maximal (zero) at a = -s."""
    s, a = _pair(s, a)
    y = a + s
    return -np.sum(y * y, axis=-1)


def rosenbrock_q(s, a):
    """Negated standard Rosenbrock of y = a + s; maximal (zero) at y = 1."""
    s, a = _pair(s, a)
    if s.shape[-1] < 2:
        raise ValueError("rosenbrock needs dimension >= 2")
    y = a + s
    y0, y1 = y[..., :-1], y[..., 1:]
    return -np.sum(100.0 * (y1 - y0 * y0) ** 2 + (1.0 - y0) ** 2, axis=-1)


def rosenbrock_paper_q(s, a):
    """Variant with the last term written as (1 - y_i^2), unsquared.

    Kept for comparison only: it is unbounded above (y_i -> inf with
    y_{i+1} = y_i^2), so it has no optimum.
    """
    s, a = _pair(s, a)
    if s.shape[-1] < 2:
        raise ValueError("rosenbrock needs dimension >= 2")
    y = a + s
    y0, y1 = y[..., :-1], y[..., 1:]
    return -np.sum(100.0 * (y1 - y0 * y0) ** 2 + (1.0 - y0 * y0), axis=-1)


@dataclass(frozen=True)
class OracleTask:
    kind: str
    dim: int
    q_fn: Callable
    optimal_action: Callable | None
    optimum: float | None


def make_oracle(kind: str, dim: int) -> OracleTask:
    if kind == "sphere":
        return OracleTask(kind, dim, sphere_q, lambda s: -np.asarray(s, dtype=np.float64), 0.0)
    if kind == "rosenbrock":
        if dim < 2:
            raise ValueError("rosenbrock needs dimension >= 2")
        return OracleTask(kind, dim, rosenbrock_q, lambda s: 1.0 - np.asarray(s, dtype=np.float64), 0.0)
    if kind == "rosenbrock_paper":
        return OracleTask(kind, dim, rosenbrock_paper_q, None, None)
    raise ValueError(f"unknown oracle task {kind!r}")


def sample_states(task: OracleTask, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be positive")
    return rng.uniform(STATE_LOW, STATE_HIGH, size=(count, task.dim))


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling (with replacement).

    Single writer; sampling is safe while no push is in flight.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, state_dim))
        self._done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, t: Transition) -> None:
        i = self._next
        self._s[i], self._a[i], self._r[i] = t.s, t.a, t.r
        self._s2[i], self._done[i] = t.s_next, t.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def get(self, idx: int) -> Transition:
        if not 0 <= idx < self._size:
            raise IndexError(idx)
        # oldest item first
        i = (self._next - self._size + idx) % self.capacity
        return Transition(self._s[i].copy(), self._a[i].copy(), float(self._r[i]),
                          self._s2[i].copy(), bool(self._done[i]))

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        # slots [0, size) are all live until the first wrap, after which all are live
        idx = rng.integers(0, self._size, size=batch_size)
        return TransitionBatch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._done[idx])


class PointMass:
    """2-D point mass that should reach the origin.

    State is the position; the action is a velocity command clipped to
    [-1, 1] per axis, applied for ``dt``. Reward is
    ``-|s|^2 - 0.01 |a|^2`` on the unclipped action. Episodes last
    ``horizon`` steps and the last one is marked terminal.
    """

    state_dim = 2
    action_dim = 2

    def __init__(self, horizon: int = 50, dt: float = 0.1, init_range: float = 1.0):
        self.horizon = horizon
        self.dt = dt
        self.init_range = init_range
        self._s = None
        self._t = 0
        self._done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._s = rng.uniform(-self.init_range, self.init_range, size=2)
        self._t = 0
        self._done = False
        return self._s.copy()

    def step(self, action) -> tuple[float, np.ndarray, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (2,):
            raise ValueError("action must have shape (2,)")
        r = -float(self._s @ self._s) - 0.01 * float(a @ a)
        self._s = self._s + self.dt * np.clip(a, -1.0, 1.0)
        self._t += 1
        self._done = self._t >= self.horizon
        return r, self._s.copy(), self._done


# ---------------------------------------------------------------- tabular MDPs

@dataclass(frozen=True)
class TabularMDP:
    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)

    @property
    def num_states(self):
        return self.rewards.shape[0]

    @property
    def num_actions(self):
        return self.rewards.shape[1]

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
        s2 = int(rng.choice(self.num_states, p=self.transitions[s, a]))
        return float(self.rewards[s, a]), s2


def self_loop_mdp(reward: float = 1.0) -> TabularMDP:
    return TabularMDP(np.ones((1, 1, 1)), np.full((1, 1), reward))


def chain_mdp(n: int = 4, slip: float = 0.1) -> TabularMDP:
    """Chain with actions left/right; reward 1 for staying right at the end.

    Each action moves in its direction with probability ``1 - slip`` and the
    other way otherwise.
    """
    p = np.zeros((n, 2, n))
    r = np.zeros((n, 2))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        p[s, 0, left] += 1 - slip
        p[s, 0, right] += slip
        p[s, 1, right] += 1 - slip
        p[s, 1, left] += slip
    r[n - 1, 1] = 1.0
    r[0, 0] = 0.2
    return TabularMDP(p, r)


def discretized_gaussian_policy(means, std: float, num_actions: int) -> np.ndarray:
    """Per-state categorical policy: action k gets mass proportional to N(k; mean_s, std)."""
    means = np.asarray(means, dtype=np.float64)
    ks = np.arange(num_actions)
    logits = -0.5 * ((ks[None, :] - means[:, None]) / std) ** 2
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def one_hot(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx)
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def tabular_features(num_states: int, num_actions: int):
    """Feature map (one-hot s, one-hot a) -> one-hot of the pair."""
    def features(s, a):
        return (s[..., :, None] * a[..., None, :]).reshape(s.shape[:-1] + (num_states * num_actions,))
    return features
