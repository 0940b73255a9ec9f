"""The policy-iteration loop: evaluate, weight, fit.

Three modes share one entry point, :func:`run`:

``oracle``
    Q is a known function of (s, a). Each iteration samples fresh states,
    samples actions from the target policy, weights them and takes one
    fitting step. No critic is involved.
``bandit``
    The state-free closed-form updates of :mod:`klpi.es`.
``rl``
    Point-mass task with a replay buffer and a TD(0) critic. The actor and
    learner alternate one environment step with one gradient step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import critic as critic_mod
from .approx import AdamState, NetSpec, init_params, save_params
from .config import TrainConfig
from .envs import PointMass, ReplayBuffer, make_oracle, sample_states
from .es import BanditGaussian, InterpolationRates, bandit_optimize
from .fitting import (KlBounds, MultiplierState, NonFiniteError, fit_step_coupled,
                      fit_step_decoupled, init_policy, policy_heads, policy_spec)
from .gauss import sample_actions
from .critic import Transition
from .weighting import TemperatureState, WeightedBatch, compute_weights

log = logging.getLogger(__name__)

STREAMS = ("env", "policy", "buffer", "init", "eval")


class TrainingAborted(RuntimeError):
    """A run stopped on a non-finite value; a diagnostic checkpoint may exist."""


@dataclass(frozen=True)
class MetricsRow:
    iter: int
    avg_return: float
    mean_policy_std: float
    kl_mean: float = 0.0
    kl_cov: float = 0.0
    eta: float = 0.0
    alpha_mean: float = 0.0
    alpha_cov: float = 0.0
    td_loss: float = 0.0
    wall_seconds: float = 0.0

    def values(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


METRIC_COLUMNS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class Streams:
    env: np.random.Generator
    policy: np.random.Generator
    buffer: np.random.Generator
    init: np.random.Generator
    eval: np.random.Generator


def seed_everything(seed: int) -> Streams:
    """Independent named generators derived from one seed."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(STREAMS))
    return Streams(*(np.random.default_rng(c) for c in children))


@dataclass
class RunResult:
    rows: list[MetricsRow]
    policy_spec: NetSpec | None = None
    policy_params: np.ndarray | None = None
    history: dict = field(default_factory=dict)  # per-iteration diagnostics


class _Recorder:
    def __init__(self, cfg: TrainConfig, sink, out_dir):
        self.cfg = cfg
        self.sink = sink
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.rows: list[MetricsRow] = []
        self.t0 = time.perf_counter()
        self.improver: _Improver | None = None  # for the diagnostic checkpoint on abort

    def due(self, it: int) -> bool:
        return it == 0 or it % self.cfg.metrics_period == 0 or it == self.cfg.iterations

    def emit(self, **kw) -> None:
        wall = time.perf_counter() - self.t0 if self.cfg.record_wall_time else 0.0
        row = MetricsRow(wall_seconds=wall, **kw)
        if not all(np.isfinite(v) for v in row.values()):
            raise NonFiniteError(f"non-finite metrics at iteration {row.iter}: {row}")
        self.rows.append(row)
        if self.sink is not None:
            self.sink.write(row)

    def checkpoint(self, name: str, spec: NetSpec, params: np.ndarray) -> None:
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            save_params(self.out_dir / f"{name}.params", spec, params)


def _bounds(cfg: TrainConfig) -> KlBounds:
    return KlBounds(cfg.eps_mean, cfg.eps_cov, cfg.coupled_eps)


def _policy(cfg: TrainConfig, state_dim: int, action_dim: int, streams: Streams):
    spec = policy_spec(state_dim, action_dim, cfg.policy_hidden, cfg.activation,
                       cfg.layer_norm_first, cfg.layer_norm_tanh)
    params = init_policy(spec, streams.init, cfg.init_std)
    params[spec.num_params - spec.output_dim:][:action_dim] = cfg.init_mean
    return spec, params


class _Improver:
    """Steps 2 and 3 on a batch of states, against a policy target snapshot."""

    def __init__(self, cfg: TrainConfig, spec: NetSpec, params: np.ndarray):
        self.cfg = cfg
        self.spec = spec
        self.params = params
        self.target = params.copy()
        self.since_sync = 0
        self.opt = AdamState.zeros(spec.num_params, cfg.policy_lr)
        self.mult = MultiplierState.create(cfg.alpha_init, cfg.multiplier_lr)
        self.temp = TemperatureState(cfg.eta_init, cfg.epsilon, cfg.eta_min)
        self.bounds = _bounds(cfg)
        self.fit = fit_step_decoupled if cfg.decoupled else fit_step_coupled
        self.last: dict = {}
        self.updates = 0

    def _anneal(self) -> None:
        cfg = self.cfg
        if cfg.policy_lr_final > 0 and cfg.iterations > 0:
            frac = min(self.updates / cfg.iterations, 1.0)
            lr = cfg.policy_lr * (cfg.policy_lr_final / cfg.policy_lr) ** frac
            self.opt = replace(self.opt, lr=lr)

    def sample(self, states, rng):
        heads = policy_heads(self.spec, self.target, states)
        return np.swapaxes(sample_actions(heads, self.cfg.num_actions, rng), 0, 1)

    def step(self, states, actions, q) -> dict:
        cfg = self.cfg
        weights, temp = compute_weights(q, cfg.transform, self.temp, cfg.rank_temp,
                                        cfg.dual_steps, cfg.dual_lr)
        batch = WeightedBatch(states, actions, q, weights, cfg.transform != "identity")
        eta = self.temp.eta if cfg.transform == "exponential" else 0.0
        self.temp = temp
        self._anneal()
        self.updates += 1
        self.params, self.mult, self.opt, m = self.fit(self.spec, self.params, self.target, batch,
                                                       self.bounds, self.mult, self.opt)
        self.since_sync += 1
        if self.since_sync >= cfg.target_period:
            self.target = self.params.copy()
            self.since_sync = 0
        m["eta"] = eta
        self.last = m
        return m


def _mean_std(spec, params, states) -> float:
    return float(np.mean(policy_heads(spec, params, states).std))


def _run_oracle(cfg: TrainConfig, streams: Streams, rec: _Recorder) -> RunResult:
    task = make_oracle(cfg.task, cfg.dim)
    spec, params = _policy(cfg, cfg.dim, cfg.dim, streams)
    imp = rec.improver = _Improver(cfg, spec, params)
    eval_states = sample_states(task, cfg.eval_states, streams.eval)
    hist = {k: np.zeros(cfg.iterations) for k in ("kl_mean", "kl_cov", "alpha_mean", "alpha_cov", "eta")}

    def emit(it):
        heads = policy_heads(spec, imp.params, eval_states)
        m = imp.last
        rec.emit(iter=it, avg_return=float(np.mean(task.q_fn(eval_states, heads.mean))),
                 mean_policy_std=float(np.mean(heads.std)), kl_mean=m.get("kl_mean", 0.0),
                 kl_cov=m.get("kl_cov", 0.0), eta=m.get("eta", imp.temp.eta if cfg.transform == "exponential" else 0.0),
                 alpha_mean=m.get("alpha_mean", 0.0), alpha_cov=m.get("alpha_cov", 0.0))

    emit(0)
    for it in range(1, cfg.iterations + 1):
        states = sample_states(task, cfg.num_states, streams.env)
        actions = imp.sample(states, streams.policy)
        q = task.q_fn(states[:, None, :], actions)
        m = imp.step(states, actions, q)
        for k in hist:
            hist[k][it - 1] = m[k]
        if rec.due(it):
            emit(it)
        if it % cfg.checkpoint_period == 0:
            rec.checkpoint("policy", spec, imp.params)
    return RunResult(rec.rows, spec, imp.params, hist)


def _run_bandit(cfg: TrainConfig, streams: Streams, rec: _Recorder) -> RunResult:
    task = make_oracle(cfg.task, cfg.dim)
    zero = np.zeros(cfg.dim)
    init = BanditGaussian.isotropic(np.full(cfg.dim, cfg.init_mean), cfg.init_std, cfg.full_cov)
    rates = InterpolationRates(cfg.rate_mean, cfg.rate_cov)

    def on_record(r):
        if rec.due(r.iteration):
            rec.emit(iter=r.iteration, avg_return=r.best_value, mean_policy_std=r.mean_std,
                     kl_mean=r.kl_mean, kl_cov=r.kl_cov,
                     eta=r.eta if cfg.transform == "exponential" else 0.0,
                     alpha_mean=cfg.rate_mean, alpha_cov=cfg.rate_cov)

    trace = bandit_optimize(lambda a: task.q_fn(zero, a), init, cfg.transform, rates,
                            cfg.iterations, streams.policy, cfg.num_actions, cfg.epsilon,
                            cfg.rank_temp, cfg.dual_steps, cfg.dual_lr, on_record)
    hist = {"best_value": np.array([r.best_value for r in trace]),
            "mean_value": np.array([r.mean_value for r in trace]),
            "entropy": np.array([r.entropy for r in trace]),
            "mean": np.array([r.mean for r in trace])}
    return RunResult(rec.rows, history=hist)


def evaluate_policy(spec: NetSpec, params: np.ndarray, episodes: int, horizon: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Undiscounted returns of the mean action over ``episodes`` fresh episodes."""
    envs = [PointMass(horizon) for _ in range(episodes)]
    s = np.array([e.reset(rng) for e in envs])
    ret = np.zeros(episodes)
    for _ in range(horizon):
        a = policy_heads(spec, params, s).mean
        out = [e.step(ai) for e, ai in zip(envs, a)]
        ret += np.array([o[0] for o in out])
        s = np.array([o[1] for o in out])
    return ret


def _run_rl(cfg: TrainConfig, streams: Streams, rec: _Recorder) -> RunResult:
    env = PointMass(cfg.horizon)
    ds, da = env.state_dim, env.action_dim
    spec, params = _policy(cfg, ds, da, streams)
    imp = rec.improver = _Improver(cfg, spec, params)
    cspec = NetSpec(ds + da, cfg.critic_hidden, 1, cfg.activation,
                    cfg.layer_norm_first, cfg.layer_norm_tanh)
    pair = critic_mod.CriticPair.create(cspec, init_params(cspec, streams.init), cfg.critic_lr,
                                        cfg.target_period)
    buf = ReplayBuffer(cfg.replay_capacity, ds, da)
    hist = {k: [] for k in ("kl_mean", "kl_cov", "alpha_mean", "alpha_cov", "eta", "td_loss")}
    td_loss = 0.0

    def bootstrap_action(states, rng):
        heads = policy_heads(spec, imp.target, states)
        return sample_actions(heads, 1, rng)[0]

    def emit(it):
        returns = evaluate_policy(spec, imp.params, cfg.eval_episodes, cfg.horizon, streams.eval)
        m = imp.last
        rec.emit(iter=it, avg_return=float(returns.mean()),
                 mean_policy_std=_mean_std(spec, imp.params, buf.sample(64, streams.eval).s) if len(buf) else
                 _mean_std(spec, imp.params, np.zeros((1, ds))),
                 kl_mean=m.get("kl_mean", 0.0), kl_cov=m.get("kl_cov", 0.0), eta=m.get("eta", 0.0),
                 alpha_mean=m.get("alpha_mean", 0.0), alpha_cov=m.get("alpha_cov", 0.0),
                 td_loss=td_loss)

    emit(0)
    s = env.reset(streams.env)
    for it in range(1, cfg.iterations + 1):
        heads = policy_heads(spec, imp.params, s[None, :])
        a = sample_actions(heads, 1, streams.policy)[0, 0]
        r, s2, done = env.step(a)
        buf.push(Transition(s, a, r, s2, done))
        s = env.reset(streams.env) if done else s2
        if len(buf) >= max(cfg.warmup_steps, cfg.num_states):
            batch = buf.sample(cfg.num_states, streams.buffer)
            pair, td_loss = critic_mod.td_update(pair, bootstrap_action, batch, cfg.gamma,
                                                 streams.policy, cfg.bootstrap_samples)
            if not np.isfinite(td_loss):
                raise NonFiniteError(f"non-finite TD loss at iteration {it}")
            actions = imp.sample(batch.s, streams.policy)
            k, n = actions.shape[:2]
            rep = np.repeat(batch.s, n, axis=0)
            q = pair.q(rep, actions.reshape(k * n, da), target=True).reshape(k, n)
            m = imp.step(batch.s, actions, q)
            for key in hist:
                hist[key].append(td_loss if key == "td_loss" else m[key])
        if rec.due(it):
            emit(it)
        if it % cfg.checkpoint_period == 0:
            rec.checkpoint("policy", spec, imp.params)
            rec.checkpoint("critic", cspec, pair.params)
    result = RunResult(rec.rows, spec, imp.params, {k: np.array(v) for k, v in hist.items()})
    result.history["critic_params"] = pair.params
    return result


def run(cfg: TrainConfig, sink=None, out_dir=None) -> RunResult:
    """Run one experiment; rows go to ``sink.write`` as they are produced."""
    streams = seed_everything(cfg.seed)
    rec = _Recorder(cfg, sink, out_dir)
    runner = {"oracle": _run_oracle, "bandit": _run_bandit, "rl": _run_rl}[cfg.mode]
    try:
        return runner(cfg, streams, rec)
    except (NonFiniteError, FloatingPointError) as exc:
        log.error("run aborted: %s", exc)
        if rec.out_dir is not None:
            rec.out_dir.mkdir(parents=True, exist_ok=True)
            (rec.out_dir / "abort.txt").write_text(f"{exc}\n", encoding="utf-8")
            if rec.improver is not None:
                rec.checkpoint("abort_policy", rec.improver.spec, rec.improver.params)
                rec.checkpoint("abort_policy_target", rec.improver.spec, rec.improver.target)
        raise TrainingAborted(str(exc)) from exc
