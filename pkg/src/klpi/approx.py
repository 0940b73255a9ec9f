"""Fully connected networks with hand-written gradients, and Adam.

Parameters live in one flat float64 vector. Layer ``l`` stores its weight
matrix ``W_l`` (fan_out x fan_in, row-major) followed by its bias; when
``layer_norm_first`` is set the first layer is followed by the layer-norm
gain and offset. A net with no hidden layers is a linear map.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ACTIVATIONS = ("elu", "tanh", "identity")
LN_EPS = 1e-6
CHECKPOINT_MAGIC = "klpi-params"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "elu"
    layer_norm_first: bool = False
    layer_norm_tanh: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.layer_norm_tanh and not self.layer_norm_first:
            raise ValueError("layer_norm_tanh requires layer_norm_first")
        if self.layer_norm_first and not self.hidden:
            raise ValueError("layer norm needs at least one hidden layer")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def num_params(self) -> int:
        s = self.sizes
        n = sum((s[i] + 1) * s[i + 1] for i in range(len(s) - 1))
        if self.layer_norm_first:
            n += 2 * s[1]
        return n


def _slices(spec: NetSpec):
    """Offsets of (W, b) per layer and the layer-norm (gain, offset)."""
    s = spec.sizes
    layers, off = [], 0
    ln = None
    for i in range(len(s) - 1):
        fi, fo = s[i], s[i + 1]
        w = (off, off + fi * fo, (fo, fi))
        off += fi * fo
        b = (off, off + fo)
        off += fo
        layers.append((w, b))
        if i == 0 and spec.layer_norm_first:
            ln = ((off, off + fo), (off + fo, off + 2 * fo))
            off += 2 * fo
    return layers, ln


def unpack(spec: NetSpec, params: np.ndarray):
    """Views ``[(W, b), ...]`` and ``(gain, offset)`` or None into ``params``."""
    if params.shape != (spec.num_params,):
        raise ValueError(f"expected {spec.num_params} params, got {params.shape}")
    layers, ln = _slices(spec)
    out = [(params[w0:w1].reshape(shape), params[b0:b1]) for (w0, w1, shape), (b0, b1) in layers]
    ln_views = None if ln is None else (params[ln[0][0]:ln[0][1]], params[ln[1][0]:ln[1][1]])
    return out, ln_views


def init_params(spec: NetSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    params = np.zeros(spec.num_params)
    layers, ln = unpack(spec, params)
    for w, _ in layers:
        fo, fi = w.shape
        lim = np.sqrt(6.0 / (fi + fo))
        w[...] = rng.uniform(-lim, lim, size=w.shape)
    if ln is not None:
        ln[0][...] = 1.0
    return params


def _act(name, z):
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, h):
    if name == "elu":
        return np.where(z > 0, 1.0, h + 1.0)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


@dataclass
class Cache:
    spec: NetSpec
    params_id: int
    x: np.ndarray
    pre: list = field(default_factory=list)  # pre-activations per hidden layer
    post: list = field(default_factory=list)  # activations per hidden layer (inputs to next)
    ln: tuple | None = None  # (xhat, inv_std, ln_out) for the first layer


def forward(spec: NetSpec, params: np.ndarray, x) -> tuple[np.ndarray, Cache]:
    """Batched forward pass; ``x`` is ``(in,)`` or ``(B, in)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[-1] != spec.input_dim:
        raise ValueError(f"expected input dim {spec.input_dim}, got {xb.shape[-1]}")
    layers, ln = unpack(spec, params)
    cache = Cache(spec, id(params), xb)
    h = xb
    for i, (w, b) in enumerate(layers[:-1]):
        z = h @ w.T + b
        if i == 0 and ln is not None:
            mu = z.mean(axis=1, keepdims=True)
            zc = z - mu
            inv_std = 1.0 / np.sqrt((zc * zc).mean(axis=1, keepdims=True) + LN_EPS)
            xhat = zc * inv_std
            y = ln[0] * xhat + ln[1]
            h = np.tanh(y) if spec.layer_norm_tanh else _act(spec.activation, y)
            cache.ln = (xhat, inv_std, y)
        else:
            h = _act(spec.activation, z)
        cache.pre.append(z)
        cache.post.append(h)
    w, b = layers[-1]
    out = h @ w.T + b
    return (out[0] if single else out), cache


def backward(spec: NetSpec, params: np.ndarray, cache: Cache, output_grad):
    """Gradient of sum <output_grad, forward(x)> w.r.t. params and x."""
    if cache.spec != spec or cache.params_id != id(params):
        raise ValueError("cache does not belong to these parameters")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (cache.x.shape[0], spec.output_dim):
        raise ValueError("output_grad shape does not match the cached forward pass")
    layers, ln = unpack(spec, params)
    grad = np.zeros_like(params)
    glayers, gln = unpack(spec, grad)
    n_hidden = len(layers) - 1
    for i in range(n_hidden, -1, -1):
        w, _ = layers[i]
        h_in = cache.x if i == 0 else cache.post[i - 1]
        glayers[i][0][...] = g.T @ h_in
        glayers[i][1][...] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ w  # grad w.r.t. post-activation of hidden layer i-1
        j = i - 1
        if j == 0 and ln is not None:
            xhat, inv_std, y = cache.ln
            h = cache.post[0]
            gy = g * ((1.0 - h * h) if spec.layer_norm_tanh else _act_grad(spec.activation, y, h))
            gln[0][...] = (gy * xhat).sum(axis=0)
            gln[1][...] = gy.sum(axis=0)
            gx = gy * ln[0]
            g = inv_std * (gx - gx.mean(axis=1, keepdims=True)
                           - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        else:
            g = g * _act_grad(spec.activation, cache.pre[j], cache.post[j])
    dx = g @ layers[0][0]
    return grad, dx


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 3e-4, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def opt_step(opt: AdamState, params: np.ndarray, grad: np.ndarray, maximize: bool = False):
    """One bias-corrected Adam step; returns ``(new_state, new_params)``."""
    if params.shape != grad.shape or opt.m.shape != params.shape:
        raise ValueError("optimizer, params and grad shapes disagree")
    g = -grad if maximize else grad
    t = opt.t + 1
    m = opt.beta1 * opt.m + (1.0 - opt.beta1) * g
    v = opt.beta2 * opt.v + (1.0 - opt.beta2) * g * g
    mhat = m / (1.0 - opt.beta1 ** t)
    vhat = v / (1.0 - opt.beta2 ** t)
    new = params - opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
    return replace(opt, m=m, v=v, t=t), new


def save_params(path, spec: NetSpec, params: np.ndarray) -> None:
    """Header line describing ``spec``, then little-endian float64 values."""
    hidden = ",".join(str(h) for h in spec.hidden) or "-"
    header = (f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} in={spec.input_dim} hidden={hidden} "
              f"out={spec.output_dim} act={spec.activation} ln_first={int(spec.layer_norm_first)} "
              f"ln_tanh={int(spec.layer_norm_tanh)} n={spec.num_params}\n")
    with open(Path(path), "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.asarray(params, dtype="<f8").tobytes())


def load_params(path) -> tuple[NetSpec, np.ndarray]:
    with open(Path(path), "rb") as fh:
        header = fh.readline().decode("ascii").split()
        body = fh.read()
    if len(header) < 2 or header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if header[1] != f"v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
    kv = dict(item.split("=", 1) for item in header[2:])
    hidden = () if kv["hidden"] == "-" else tuple(int(h) for h in kv["hidden"].split(","))
    spec = NetSpec(int(kv["in"]), hidden, int(kv["out"]), kv["act"],
                   bool(int(kv["ln_first"])), bool(int(kv["ln_tanh"])))
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if params.size != int(kv["n"]) or params.size != spec.num_params:
        raise ValueError(f"{path}: expected {spec.num_params} values, found {params.size}")
    return spec, params
