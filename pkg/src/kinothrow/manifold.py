"""Learned motion manifold: trajectory encoder and continuous-time decoder.

The decoder factorizes as q_hat(z, t) = sum_b psi_b(z) * theta_b(t), so
time derivatives touch only the scalar-input theta network (evaluated
with truncated-Taylor jets) and one psi evaluation serves any number of
time points.  A separate head predicts the release time from z alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .learncore import AdamState, Mlp, adam_step, cosine_lr, jet_eval, mlp_forward

# instrumentation: number of psi-network forward passes (caching contract)
PSI_EVALS = [0]


@dataclass(frozen=True)
class DmmConfig:
    """Architecture and training settings of the motion manifold."""

    m: int = 32
    N_b: int = 100
    L: int = 100
    T: float = 3.0
    weight_sharpness: float = 4.0
    w_eta_recon: float = 1.0
    enc_hidden: tuple = (256, 256, 256)
    psi_hidden: tuple = (256, 256, 256)
    theta_hidden: tuple = (256, 256, 256)
    eta_hidden: tuple = (128, 128)
    epochs: int = 400
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.N_b, self.L, self.epochs, self.batch_size) < 1:
            raise ValueError("counts must be positive")

    def validate_for(self, n: int):
        if self.m >= self.L * n:
            raise ValueError("latent dimension must be smaller than the trajectory dimension")


@dataclass(frozen=True)
class Encoder:
    """Maps a discretized motion (trajectory, release time) to a latent code."""

    net: Mlp
    params: np.ndarray
    L: int
    n: int
    T: float

    @property
    def m(self) -> int:
        return self.net.out_dim


@dataclass(frozen=True)
class Decoder:
    """Latent-to-motion decoder with the linear-in-basis time factorization."""

    psi: Mlp
    theta: Mlp
    eta_net: Mlp
    psi_params: np.ndarray
    theta_params: np.ndarray
    eta_params: np.ndarray
    N_b: int
    n: int
    T: float

    @property
    def m(self) -> int:
        return self.psi.in_dim


def build_models(cfg: DmmConfig, n: int, rng: np.random.Generator):
    """Fresh encoder/decoder with fan-in init; theta's last layer near zero."""
    cfg.validate_for(n)
    enc_net = Mlp((cfg.L * n + 1, *cfg.enc_hidden, cfg.m))
    psi_net = Mlp((cfg.m, *cfg.psi_hidden, cfg.N_b))
    theta_net = Mlp((1, *cfg.theta_hidden, cfg.N_b * n))
    eta_net = Mlp((cfg.m, *cfg.eta_hidden, 1))
    enc = Encoder(enc_net, enc_net.init_params(rng), cfg.L, n, cfg.T)
    dec = Decoder(
        psi_net,
        theta_net,
        eta_net,
        psi_net.init_params(rng),
        theta_net.init_params(rng, final_scale=1e-2),
        eta_net.init_params(rng),
        cfg.N_b,
        n,
        cfg.T,
    )
    return enc, dec


def _encoder_input(enc: Encoder, traj, eta):
    tv = ad.value(traj)
    if tv.shape[-2:] != (enc.L, enc.n):
        raise ValueError(f"trajectory must have shape (..., {enc.L}, {enc.n})")
    flat = ad.reshape(traj, tv.shape[:-2] + (enc.L * enc.n,)) / np.pi
    e = eta if isinstance(eta, ad.Var) else np.asarray(eta, dtype=np.float64)
    e1 = ad.reshape(e, ad.value(e).shape + (1,)) if isinstance(e, ad.Var) else e[..., None]
    return ad.concat([flat, e1 / enc.T], axis=-1)


def encode(enc: Encoder, traj, eta, params=None):
    """Latent code(s) for discretized motion(s); batched over leading axes."""
    p = enc.params if params is None else params
    return mlp_forward(enc.net, p, _encoder_input(enc, traj, eta))


def psi_forward(dec: Decoder, z, params=None):
    """Basis coefficients psi(z); counted for the caching contract."""
    PSI_EVALS[0] += 1
    p = dec.psi_params if params is None else params
    return mlp_forward(dec.psi, p, z)


def eta_head(dec: Decoder, z, params=None):
    """Predicted release time, squashed into (0, T)."""
    p = dec.eta_params if params is None else params
    raw = mlp_forward(dec.eta_net, p, z)
    return dec.T * ad.sigmoid(raw[..., 0])


def theta_table(dec: Decoder, t, order: int = 0, params=None):
    """theta basis values and time derivatives at t; tuple of (..., N_b, n)."""
    p = dec.theta_params if params is None else params
    tv = np.asarray(ad.value(t), dtype=np.float64)
    if np.any(tv < -1e-9) or np.any(tv > dec.T + 1e-9):
        raise ValueError(f"time outside [0, {dec.T}]")
    shape = tv.shape + (dec.N_b, dec.n)
    if order == 0:
        out = mlp_forward(dec.theta, p, _app(t))
        return (ad.reshape(out, shape),)
    jet = jet_eval(dec.theta, p, t)
    return tuple(ad.reshape(jet.order(k), shape) for k in range(order + 1))


def _app(x):
    if isinstance(x, ad.Var):
        return ad.reshape(x, ad.value(x).shape + (1,))
    return np.asarray(x, dtype=np.float64)[..., None]


def combine(psi, theta_k):
    """Contract psi (..., N_b) with a theta table entry (t..., N_b, n).

    Leading psi axes broadcast against leading theta axes; the result has
    shape psi_batch + t_shape + (n,).
    """
    pv = ad.value(psi)
    tv = ad.value(theta_k)
    t_lead = tv.shape[:-2]
    Nb, n = tv.shape[-2:]
    if not t_lead:
        return ad.matmul(psi, theta_k)
    if isinstance(theta_k, ad.Var):
        perm = (len(t_lead),) + tuple(range(len(t_lead))) + (len(t_lead) + 1,)
        moved = ad.transpose(theta_k, perm)
    else:
        moved = np.moveaxis(tv, -2, 0)
    flat = ad.reshape(moved, (Nb, int(np.prod(t_lead)) * n))
    out = ad.matmul(psi, flat)
    return ad.reshape(out, pv.shape[:-1] + t_lead + (n,))


def decode(dec: Decoder, z, t, order: int = 0, params=None):
    """(derivatives tuple up to `order`, eta_hat) for latent code(s) z.

    One psi evaluation covers every time in t; derivative order k reads
    only the k-th jet of theta.
    """
    pp, tp, ep = params if params is not None else (None, None, None)
    psi = psi_forward(dec, z, pp)
    table = theta_table(dec, t, order, tp)
    derivs = tuple(combine(psi, th) for th in table)
    return derivs, eta_head(dec, z, ep)


class DecodedMotion:
    """Adapter giving a decoded latent the Motion-evaluator interface."""

    def __init__(self, dec: Decoder, z, eta=None):
        self.dec = dec
        self.z = np.asarray(z, dtype=np.float64)
        self._psi = None
        self.eta = float(eta_head(dec, self.z)) if eta is None else float(eta)
        self.T = dec.T

    def eval(self, t, order: int = 0):
        if self._psi is None:
            self._psi = psi_forward(self.dec, self.z)
        table = theta_table(self.dec, t, order)
        return combine(self._psi, table[order])

    def __call__(self, t, order: int = 0):
        return self.eval(t, order)


def release_weights(grid: np.ndarray, etas, sharpness: float):
    """c(t) = exp(-sharpness (t - eta)^2), shape (batch, L)."""
    e = np.asarray(etas, dtype=np.float64)[..., None]
    d = grid - e
    return np.exp(-sharpness * d * d)


def release_weighted_rmse(q_hat, traj, grid, eta, sharpness: float = 4.0) -> float:
    """Reconstruction RMSE under the release-time weight profile (radians)."""
    w = release_weights(grid, np.atleast_1d(eta), sharpness)
    q_hat = np.asarray(q_hat)
    traj = np.asarray(traj)
    err2 = np.sum((q_hat - traj) ** 2, axis=-1)
    n = traj.shape[-1]
    return float(np.sqrt(np.sum(w * err2) / (np.sum(w) * n)))


def recon_loss(enc: Encoder, dec: Decoder, trajs, etas, cfg: DmmConfig, params=None, weights=None):
    """Release-weighted reconstruction error of a batch of dataset entries.

    params, when given, is (enc_p, psi_p, theta_p, eta_p) so gradients can
    flow; weights overrides the c(t) profile (tests use c = 1).
    """
    ep, pp, tp, hp = params if params is not None else (None, None, None, None)
    grid = np.linspace(0.0, cfg.T, cfg.L)
    z = encode(enc, trajs, etas, ep)
    psi = psi_forward(dec, z, pp)
    table = theta_table(dec, grid, 0, tp)
    q_hat = combine(psi, table[0])  # (B, L, n)
    if weights is None:
        weights = release_weights(grid, etas, cfg.weight_sharpness)
    err = q_hat - trajs
    traj_term = ad.amean(ad.asum(err * err, axis=-1) * weights, axis=-1)
    eta_hat = eta_head(dec, z, hp)
    eta_term = (eta_hat - etas) ** 2
    return ad.amean(traj_term + cfg.w_eta_recon * eta_term)


def train_dmm(dataset, cfg: DmmConfig, seed=None):
    """Train encoder + decoder on a collected dataset.

    Returns (Encoder, Decoder, per-epoch mean loss list).  Deterministic
    given the seed at one thread.
    """
    if not dataset.entries:
        raise ValueError("dataset is empty")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = dataset.n
    enc, dec = build_models(cfg, n, rng)
    trajs = dataset.trajectories()
    etas = dataset.release_times()
    N = len(dataset.entries)

    params = [enc.params, dec.psi_params, dec.theta_params, dec.eta_params]
    states = [AdamState.init(p.size, lr=cfg.lr) for p in params]
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        losses = []
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr, 0.01 * cfg.lr)
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]

            def loss(vs):
                return recon_loss(enc, dec, trajs[idx], etas[idx], cfg, params=vs)

            lv, grads = ad.grad(loss, params)
            losses.append(lv)
            for k in range(4):
                states[k], flat = adam_step(states[k], params[k].ravel(), grads[k].ravel(), lr=lr)
                params[k] = flat
        curve.append(float(np.mean(losses)))
    enc = replace(enc, params=params[0])
    dec = replace(dec, psi_params=params[1], theta_params=params[2], eta_params=params[3])
    return enc, dec, curve
