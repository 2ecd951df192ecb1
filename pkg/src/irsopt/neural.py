"""Feedforward actor/critic networks with hand-written backprop.

Hidden layers are ``affine -> layer norm -> ReLU``; the output layer is
affine followed by either ``pi * (tanh(z) + 1)`` (``"scaled-phase"``) or the
identity (``"linear"``). Weights are stored as (fan_in, fan_out) so a batch
``x`` of shape (B, fan_in) maps to ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import LN_EPS

HIDDEN = (300, 200)
OUTPUT_TAGS = ("scaled-phase", "linear")
CKPT_VERSION = "irsopt-ckpt-v1"


class StaleCacheError(RuntimeError):
    pass


@dataclass
class MLPParams:
    widths: tuple[int, ...]
    output: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    ln_gains: list[np.ndarray]
    ln_biases: list[np.ndarray]
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.output not in OUTPUT_TAGS:
            raise ValueError(f"unknown output activation {self.output!r}")
        n_layers = len(self.widths) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("one weight/bias pair per layer expected")
        if len(self.ln_gains) != n_layers - 1 or len(self.ln_biases) != n_layers - 1:
            raise ValueError("one normalisation pair per hidden layer expected")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in canonical order (W, b, [gain, beta]) per layer."""
        out = []
        for i in range(self.n_layers):
            out += [self.weights[i], self.biases[i]]
            if i < self.n_layers - 1:
                out += [self.ln_gains[i], self.ln_biases[i]]
        return out

    def names(self) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out += [f"W{i}", f"b{i}"]
            if i < self.n_layers - 1:
                out += [f"g{i}", f"beta{i}"]
        return out

    def copy(self) -> "MLPParams":
        return MLPParams(
            self.widths,
            self.output,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [g.copy() for g in self.ln_gains],
            [e.copy() for e in self.ln_biases],
        )

    def touch(self):
        self.version += 1


def init_mlp(rng: np.random.Generator, widths, output: str, final_scale: float = 3e-3) -> MLPParams:
    widths = tuple(int(w) for w in widths)
    weights, biases = [], []
    n_layers = len(widths) - 1
    for i in range(n_layers):
        lim = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(widths[i])
        weights.append(rng.uniform(-lim, lim, (widths[i], widths[i + 1])))
        biases.append(rng.uniform(-lim, lim, widths[i + 1]))
    gains = [np.ones(w) for w in widths[1:-1]]
    betas = [np.zeros(w) for w in widths[1:-1]]
    return MLPParams(widths, output, weights, biases, gains, betas)


def actor_widths(m: int, hidden=HIDDEN) -> tuple[int, ...]:
    return (m + 1, *hidden, m)


def critic_widths(m: int, hidden=HIDDEN) -> tuple[int, ...]:
    return (2 * m + 1, *hidden, 1)


def zeros_like(params: MLPParams) -> MLPParams:
    p = params.copy()
    for a in p.arrays():
        a[...] = 0.0
    return p


@dataclass
class ForwardCache:
    version: int
    inputs: list[np.ndarray]  # input of every affine layer
    xhat: list[np.ndarray]
    inv_std: list[np.ndarray]
    pre_relu: list[np.ndarray]
    out_pre: np.ndarray
    squeeze: bool


def forward(params: MLPParams, x):
    """Batched forward pass. ``x`` is (fan_in,) or (B, fan_in)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != params.widths[0]:
        raise ValueError(f"input width {a.shape[1]} != {params.widths[0]}")
    cache = ForwardCache(params.version, [], [], [], [], None, squeeze)
    for i in range(params.n_layers - 1):
        cache.inputs.append(a)
        z = a @ params.weights[i] + params.biases[i]
        mu = z.mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + LN_EPS)
        xhat = (z - mu) * inv
        y = params.ln_gains[i] * xhat + params.ln_biases[i]
        cache.xhat.append(xhat)
        cache.inv_std.append(inv)
        cache.pre_relu.append(y)
        a = np.maximum(y, 0.0)
    cache.inputs.append(a)
    z = a @ params.weights[-1] + params.biases[-1]
    cache.out_pre = z
    out = np.pi * (np.tanh(z) + 1.0) if params.output == "scaled-phase" else z
    return (out[0] if squeeze else out), cache


@dataclass
class GradientBundle:
    grads: list[np.ndarray]
    d_input: np.ndarray | None = None


def backward(params: MLPParams, cache: ForwardCache, upstream) -> GradientBundle:
    """Gradients of ``sum(output * upstream)`` w.r.t. parameters and input."""
    if cache.version != params.version:
        raise StaleCacheError("cache was produced before the last parameter update")
    g = np.asarray(upstream, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if params.output == "scaled-phase":
        t = np.tanh(cache.out_pre)
        g = g * np.pi * (1.0 - t * t)
    n_layers = params.n_layers
    grads: list = [None] * len(params.arrays())
    # offsets of each layer's block in the canonical order
    offs, o = [], 0
    for i in range(n_layers):
        offs.append(o)
        o += 2 if i == n_layers - 1 else 4

    for i in range(n_layers - 1, -1, -1):
        a = cache.inputs[i]
        grads[offs[i]] = a.T @ g
        grads[offs[i] + 1] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i == 0:
            break
        j = i - 1
        # ReLU
        g = g * (cache.pre_relu[j] > 0)
        xhat = cache.xhat[j]
        grads[offs[j] + 2] = (g * xhat).sum(axis=0)
        grads[offs[j] + 3] = g.sum(axis=0)
        dx = g * params.ln_gains[j]
        g = cache.inv_std[j] * (
            dx - dx.mean(axis=1, keepdims=True) - xhat * (dx * xhat).mean(axis=1, keepdims=True)
        )
    d_in = g[0] if cache.squeeze else g
    return GradientBundle(grads, d_in)


def policy_forward(params: MLPParams, x) -> np.ndarray:
    """Single-sample forward pass through the compiled kernel when possible."""
    if params.n_layers != 3:
        return forward(params, x)[0]
    return kernels.mlp3_forward(
        np.ascontiguousarray(x, dtype=float),
        params.weights[0], params.biases[0], params.ln_gains[0], params.ln_biases[0],
        params.weights[1], params.biases[1], params.ln_gains[1], params.ln_biases[1],
        params.weights[2], params.biases[2],
        scaled=params.output == "scaled-phase",
    )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MLPParams, lr: float = 1e-3, **kw) -> "AdamState":
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], lr=lr, **kw)


def adam_step(params: MLPParams, grads: GradientBundle, state: AdamState, ascend: bool = False):
    """In-place bias-corrected Adam update; returns ``(params, state)``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    sign = -1.0 if ascend else 1.0
    for p, g, m, v in zip(params.arrays(), grads.grads, state.m, state.v):
        g = sign * g
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.touch()
    return params, state


def polyak_update(target: MLPParams, online: MLPParams, tau: float) -> MLPParams:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o
    target.touch()
    return target


def perturb_params(params: MLPParams, sigma: float, rng: np.random.Generator) -> MLPParams:
    """Copy with N(0, sigma^2) added to affine weights and biases only."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = params.copy()
    if sigma == 0:
        return out
    for w, b in zip(out.weights, out.biases):
        w += sigma * rng.standard_normal(w.shape)
        b += sigma * rng.standard_normal(b.shape)
    return out


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, nets: dict[str, MLPParams], step: int = 0, meta: dict | None = None) -> Path:
    """Write networks to an ``.npz`` container tagged ``irsopt-ckpt-v1``."""
    path = Path(path)
    header = {
        "format": CKPT_VERSION,
        "step": int(step),
        "meta": meta or {},
        "nets": {
            name: {"widths": list(p.widths), "output": p.output, "order": p.names()}
            for name, p in nets.items()
        },
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name, p in nets.items():
        for key, a in zip(p.names(), p.arrays()):
            arrays[f"{name}/{key}"] = np.ascontiguousarray(a)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Return ``(nets, step, meta)``; raises ``ValueError`` on a foreign file."""
    with np.load(Path(path), allow_pickle=False) as data:
        if "__header__" not in data:
            raise ValueError(f"{path} is not an irsopt checkpoint")
        header = json.loads(data["__header__"].tobytes().decode())
        if header.get("format") != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        nets = {}
        for name, desc in header["nets"].items():
            arrs = {k: data[f"{name}/{k}"].astype(float) for k in desc["order"]}
            n_layers = len(desc["widths"]) - 1
            nets[name] = MLPParams(
                tuple(desc["widths"]),
                desc["output"],
                [arrs[f"W{i}"] for i in range(n_layers)],
                [arrs[f"b{i}"] for i in range(n_layers)],
                [arrs[f"g{i}"] for i in range(n_layers - 1)],
                [arrs[f"beta{i}"] for i in range(n_layers - 1)],
            )
    return nets, header["step"], header["meta"]
