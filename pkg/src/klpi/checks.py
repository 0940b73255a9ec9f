"""Built-in verification suite behind ``klpi check``.

Every check compares library code against an independent oracle: central
finite differences for gradients, golden-section search for the dual
temperature, and 1-D numerical quadrature for the KL formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .approx import NetSpec, backward, forward, init_params
from .fitting import KlBounds, lagrangian, policy_heads, policy_spec
from .gauss import GaussianHead, kl, kl_cov, kl_mean, softplus_inv
from .weighting import TemperatureState, dual_grad, dual_value, exp_weights, sample_kl, solve_eta

FD_STEP = 1e-5
GRAD_TOL = 1e-4
# below this magnitude both numbers count as zero for the relative error
GRAD_FLOOR = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def rel_error(analytic, numeric, floor: float = GRAD_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    flat, g = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(x)
        flat[i] = keep - h
        down = fn(x)
        flat[i] = keep
        g[i] = (up - down) / (2 * h)
    return out


# ---------------------------------------------------------------- gradients

def _random_net(rng) -> NetSpec:
    depth = int(rng.integers(0, 3))
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=depth))
    act = str(rng.choice(["elu", "tanh", "identity"]))
    ln = bool(rng.integers(0, 2)) and depth > 0
    return NetSpec(int(rng.integers(1, 4)), hidden, int(rng.integers(1, 4)), act, ln,
                   ln and bool(rng.integers(0, 2)))


def net_gradient_error(rng) -> float:
    """Worst relative error of backward() on one random net and input."""
    spec = _random_net(rng)
    params = init_params(spec, rng) + 0.1 * rng.standard_normal(spec.num_params)
    x = rng.standard_normal((int(rng.integers(1, 4)), spec.input_dim))
    out_grad = rng.standard_normal((x.shape[0], spec.output_dim))
    _, cache = forward(spec, params, x)
    g_params, g_x = backward(spec, params, cache, out_grad)

    def f_params(p):
        return float(np.sum(out_grad * forward(spec, p, x)[0]))

    def f_input(z):
        return float(np.sum(out_grad * forward(spec, params, z)[0]))

    return float(max(rel_error(g_params, central_diff(f_params, params)).max(),
                     rel_error(g_x, central_diff(f_input, x)).max()))


def lagrangian_gradient_error(rng, decoupled: bool) -> float:
    ds, da, k, n = int(rng.integers(1, 4)), int(rng.integers(1, 4)), 3, 4
    spec = policy_spec(ds, da, (5,), str(rng.choice(["elu", "tanh"])))
    params = init_params(spec, rng)
    params[-da:] = softplus_inv(0.5)  # chol_raw bias
    target = params + 0.05 * rng.standard_normal(params.size)
    params = params + 0.05 * rng.standard_normal(params.size)
    states = rng.standard_normal((k, ds))
    tgt = policy_heads(spec, target, states)
    actions = tgt.mean[:, None, :] + tgt.std[:, None, :] * rng.standard_normal((k, n, da))
    weights = rng.dirichlet(np.ones(n), size=k)
    bounds = KlBounds(0.1, 0.01, 0.1)
    alphas = rng.uniform(0.0, 2.0, size=3)
    _, grad, _ = lagrangian(spec, params, tgt, states, actions, weights, bounds, alphas, decoupled)

    def f(p):
        return lagrangian(spec, p, tgt, states, actions, weights, bounds, alphas, decoupled)[0]

    return float(rel_error(grad, central_diff(f, params)).max())


def dual_gradient_error(rng) -> float:
    q = rng.standard_normal((int(rng.integers(1, 9)), int(rng.integers(2, 9)))) * rng.uniform(0.1, 10)
    eta = float(np.exp(rng.uniform(-1, 2)))
    eps = float(rng.uniform(0.01, 0.5))
    num = (dual_value(q, eta + FD_STEP, eps) - dual_value(q, eta - FD_STEP, eps)) / (2 * FD_STEP)
    return float(rel_error(dual_grad(q, eta, eps), num))


# ---------------------------------------------------------------- dual oracle

def golden_eta(q, epsilon: float) -> float:
    """Golden-section minimizer of the dual over ln(eta)."""
    q = np.asarray(q, dtype=np.float64)
    centre = np.log(float(np.ptp(q)) or 1.0)
    lo, hi = centre - 20.0, centre + 10.0  # the dual is unimodal in ln(eta)
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0

    def f(u):
        return dual_value(q, float(np.exp(u)), epsilon)

    c, d = hi - inv_phi * (hi - lo), lo + inv_phi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > 1e-11:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = f(d)
    return float(np.exp(0.5 * (lo + hi)))


def converge_eta(q, epsilon: float, eta0: float = 1.0) -> float:
    """solve_eta on a decreasing step schedule, finishing with plain descent."""
    state = TemperatureState(eta=eta0, epsilon=epsilon, eta_min=1e-12)
    for lr, steps in ((0.3, 300), (0.03, 300), (0.003, 300)):
        state = solve_eta(q, state, steps, lr, "adam")
    for lr in (1.0, 0.1):
        state = solve_eta(q, state, 500, lr, "gd")
    return state.eta


def dual_instance(rng, epsilon: float = 0.1) -> tuple[float, float]:
    """(relative eta error vs golden section, sample KL minus epsilon)."""
    k, n = int(rng.integers(1, 9)), int(rng.integers(2, 9))
    q = rng.standard_normal((k, n)) * rng.uniform(0.1, 10.0)
    ref = golden_eta(q, epsilon)
    eta = converge_eta(q, epsilon)
    budget = float(np.mean(sample_kl(exp_weights(q, eta)))) - epsilon
    return abs(eta - ref) / ref, budget


# ---------------------------------------------------------------- KL quadrature

def quadrature_kl(mu_p, s_p, mu_q, s_q) -> float:
    def integrand(x):
        zp, zq = (x - mu_p) / s_p, (x - mu_q) / s_q
        logp = -0.5 * zp * zp - np.log(s_p) - 0.5 * np.log(2 * np.pi)
        logq = -0.5 * zq * zq - np.log(s_q) - 0.5 * np.log(2 * np.pi)
        return np.exp(logp) * (logp - logq)

    width = 40.0 * s_p
    val, _ = integrate.quad(integrand, mu_p - width, mu_p + width, epsabs=1e-13, epsrel=1e-12,
                            limit=200, points=[mu_p])
    return float(val)


def kl_instance(rng) -> float:
    """Worst absolute error of kl_mean, kl_cov, kl and the split identity."""
    mu_o, mu_n = rng.uniform(-2, 2, size=2)
    a_o, a_n = np.exp(rng.uniform(-1, 1, size=2))
    old = GaussianHead.from_std(np.array([mu_o]), np.array([a_o]))
    new = GaussianHead.from_std(np.array([mu_n]), np.array([a_n]))
    errs = [
        abs(float(kl_mean(old, [mu_n])) - quadrature_kl(mu_o, a_o, mu_n, a_o)),
        abs(float(kl_cov(old, [a_n])) - quadrature_kl(mu_o, a_o, mu_o, a_n)),
        abs(float(kl(old, new)) - quadrature_kl(mu_o, a_o, mu_n, a_n)),
        # full KL = covariance part + mean part measured with the new std
        abs(float(kl(old, new)) - float(kl_cov(old, [a_n])) - 0.5 * ((mu_n - mu_o) / a_n) ** 2),
    ]
    return float(max(errs))


# ---------------------------------------------------------------- suite

def run_checks(seed: int = 0, instances: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def add(name, worst, tol):
        out.append(CheckResult(name, bool(worst < tol), f"worst={worst:.3g} tol={tol:g}"))

    add("net backward vs finite differences",
        max(net_gradient_error(rng) for _ in range(instances)), GRAD_TOL)
    add("decoupled Lagrangian gradient",
        max(lagrangian_gradient_error(rng, True) for _ in range(instances)), GRAD_TOL)
    add("coupled Lagrangian gradient",
        max(lagrangian_gradient_error(rng, False) for _ in range(instances)), GRAD_TOL)
    add("dual derivative", max(dual_gradient_error(rng) for _ in range(instances)), GRAD_TOL)
    duals = [dual_instance(rng) for _ in range(instances)]
    add("temperature vs golden section", max(d[0] for d in duals), 1e-3)
    add("sample KL within budget", max(d[1] for d in duals), 1e-6)
    add("KL formulas vs quadrature", max(kl_instance(rng) for _ in range(instances)), 1e-8)
    return out
