"""Numeric substrate for the learned components.

Small fully connected networks with a C^4 activation, a degree-3
truncated-Taylor ("jet") forward pass for exact time derivatives of
scalar-input networks, and the Adam update rule.  Parameters live in flat
float64 vectors so checkpoints and optimizer states stay trivial.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad

_ACTIVATIONS = ("gelu", "identity")


@dataclass(frozen=True)
class Mlp:
    """Architecture tag: layer widths plus activation; parameters live outside."""

    layer_widths: tuple
    activation: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2 or any(w < 1 for w in self.layer_widths):
            raise ValueError("need >= 2 positive layer widths")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    def layout(self):
        """Per-layer (weight_slice, bias_slice, (fan_in, fan_out)) triples."""
        out, start = [], 0
        for fi, fo in zip(self.layer_widths, self.layer_widths[1:]):
            ws = slice(start, start + fi * fo)
            bs = slice(start + fi * fo, start + fi * fo + fo)
            out.append((ws, bs, (fi, fo)))
            start = bs.stop
        return out

    @property
    def n_params(self) -> int:
        return self.layout()[-1][1].stop

    def init_params(self, rng: np.random.Generator, final_scale: float = 1.0) -> np.ndarray:
        """Uniform fan-in init; final layer scaled (near-zero for decoders)."""
        p = np.empty(self.n_params)
        layers = self.layout()
        for li, (ws, bs, (fi, fo)) in enumerate(layers):
            bound = 1.0 / np.sqrt(fi)
            if li == len(layers) - 1:
                bound *= final_scale
            p[ws] = rng.uniform(-bound, bound, fi * fo)
            p[bs] = rng.uniform(-bound, bound, fo)
        return p


def _layer_mats(net: Mlp, params):
    for ws, bs, (fi, fo) in net.layout():
        W = ad.reshape(params[ws], (fi, fo)) if isinstance(params, ad.Var) else params[ws].reshape(fi, fo)
        yield W, params[bs]


def mlp_forward(net: Mlp, params, x):
    """Affine-activation composition; final layer affine.  Batched over leading axes."""
    if ad.value(x).shape[-1] != net.in_dim:
        raise ValueError(f"input last axis must be {net.in_dim}")
    h = x
    layers = list(_layer_mats(net, params))
    for li, (W, b) in enumerate(layers):
        h = ad.matmul(h, W) + b
        if li < len(layers) - 1 and net.activation == "gelu":
            h = ad.gelu(h)
    return h


@dataclass(frozen=True)
class Jet3:
    """Value and derivatives to order 3 w.r.t. one scalar variable."""

    d0: object
    d1: object
    d2: object
    d3: object

    def __add__(self, other):
        if isinstance(other, Jet3):
            return Jet3(self.d0 + other.d0, self.d1 + other.d1, self.d2 + other.d2, self.d3 + other.d3)
        return Jet3(self.d0 + other, self.d1, self.d2, self.d3)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Jet3):
            # Leibniz rule truncated at order 3
            a, b = self, other
            return Jet3(
                a.d0 * b.d0,
                a.d1 * b.d0 + a.d0 * b.d1,
                a.d2 * b.d0 + 2.0 * a.d1 * b.d1 + a.d0 * b.d2,
                a.d3 * b.d0 + 3.0 * a.d2 * b.d1 + 3.0 * a.d1 * b.d2 + a.d0 * b.d3,
            )
        return Jet3(self.d0 * other, self.d1 * other, self.d2 * other, self.d3 * other)

    __rmul__ = __mul__

    def order(self, k: int):
        return (self.d0, self.d1, self.d2, self.d3)[k]

    @staticmethod
    def variable(t):
        """The identity jet of the scalar variable itself."""
        tv = np.asarray(ad.value(t), dtype=np.float64)
        one = np.ones_like(tv)
        zero = np.zeros_like(tv)
        return Jet3(t, one, zero, zero)


def gelu_jet(x: Jet3) -> Jet3:
    """Compose the GELU activation with a jet (Faa di Bruno to order 3)."""
    f1 = ad.gelu_d(x.d0, 1)
    f2 = ad.gelu_d(x.d0, 2)
    f3 = ad.gelu_d(x.d0, 3)
    return Jet3(
        ad.gelu_d(x.d0, 0),
        f1 * x.d1,
        f2 * x.d1 * x.d1 + f1 * x.d2,
        f3 * x.d1 * x.d1 * x.d1 + 3.0 * f2 * x.d1 * x.d2 + f1 * x.d3,
    )


def jet_eval(net: Mlp, params, t) -> Jet3:
    """Output jet of a scalar-input network at time(s) t.

    Coefficients have shape t.shape + (out_dim,).  Works with plain or
    Var parameters, so training losses can read derivative orders.
    """
    if net.in_dim != 1:
        raise ValueError("jet_eval requires a scalar-input network")
    tj = Jet3.variable(t)
    h = Jet3(_app(tj.d0), _app(tj.d1), _app(tj.d2), _app(tj.d3))
    layers = list(_layer_mats(net, params))
    for li, (W, b) in enumerate(layers):
        h = Jet3(
            ad.matmul(h.d0, W) + b,
            ad.matmul(h.d1, W),
            ad.matmul(h.d2, W),
            ad.matmul(h.d3, W),
        )
        if li < len(layers) - 1 and net.activation == "gelu":
            h = gelu_jet(h)
    return h


def _app(x):
    """Append a trailing feature axis of width 1."""
    if isinstance(x, ad.Var):
        return ad.reshape(x, ad.value(x).shape + (1,))
    return np.asarray(x, dtype=np.float64)[..., None]


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam optimizer state for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float = None):
    """One deterministic Adam update; returns (new_state, new_params)."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/state shape mismatch")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    step_lr = state.lr if lr is None else lr
    new_params = params - step_lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, m=m, v=v, step=t), new_params


def cosine_lr(step: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine-decayed learning rate over a fixed step budget."""
    frac = min(max(step / max(total, 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * frac))
