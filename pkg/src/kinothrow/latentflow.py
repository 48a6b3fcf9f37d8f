"""Task-conditioned latent sampler trained with conditional flow matching.

A small network predicts the velocity of a straight-line probability path
from a standard-normal prior to the encoder's latent codes, conditioned
on the normalized task.  Sampling integrates that field with fixed-step
explicit Euler, so the evaluation count per sample is exactly 1/ds.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .learncore import AdamState, Mlp, adam_step, cosine_lr, mlp_forward
from .task import TaskParam

# instrumentation: number of velocity-field forward passes
FIELD_EVALS = [0]


@dataclass(frozen=True)
class FlowConfig:
    """Integrator and training settings of the latent flow."""

    ds: float = 0.1
    hidden: tuple = (128, 128, 128)
    epochs: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        steps = 1.0 / self.ds
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("1/ds must be an integer")
        if min(self.epochs, self.batch_size) < 1:
            raise ValueError("counts must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(1.0 / self.ds))


@dataclass(frozen=True)
class VelocityField:
    """dz/ds = v(s, tau, z); input layout [s, tau_normalized, z]."""

    net: Mlp
    params: np.ndarray
    m: int
    task_bounds: tuple  # (r_lo, r_hi, h_lo, h_hi) used for normalization


def build_field(m: int, task_bounds, cfg: FlowConfig, rng: np.random.Generator) -> VelocityField:
    net = Mlp((1 + 2 + m, *cfg.hidden, m))
    return VelocityField(net, net.init_params(rng), m, tuple(float(b) for b in task_bounds))


def normalize_task(field: VelocityField, taus):
    """Scale (r, h) into [0,1]^2 using the field's task-space bounds."""
    r_lo, r_hi, h_lo, h_hi = field.task_bounds
    t = np.atleast_2d(np.asarray(taus, dtype=np.float64))
    r_span = max(r_hi - r_lo, 1e-12)
    h_span = max(h_hi - h_lo, 1e-12)
    out = np.stack([(t[:, 0] - r_lo) / r_span, (t[:, 1] - h_lo) / h_span], axis=-1)
    return out


def field_forward(field: VelocityField, s, taus_norm, z, params=None):
    """Velocity at flow time s; batched over the leading axis."""
    FIELD_EVALS[0] += 1
    p = field.params if params is None else params
    sv = np.broadcast_to(np.asarray(ad.value(s), dtype=np.float64).reshape(-1, 1), (ad.value(z).shape[0], 1))
    x = ad.concat([sv, np.asarray(taus_norm, dtype=np.float64), z], axis=-1)
    return mlp_forward(field.net, p, x)


def cfm_loss(field: VelocityField, taus, z1, rng: np.random.Generator, params=None):
    """Flow-matching regression loss on a batch of (task, latent) pairs.

    Draws fresh prior noise and path positions; the target velocity is
    the straight-line displacement z1 - z0.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    B, m = z1.shape
    z0 = rng.standard_normal((B, m))
    s = rng.uniform(0.0, 1.0, B)
    zs = (1.0 - s)[:, None] * z0 + s[:, None] * z1
    tn = normalize_task(field, taus)
    x = np.concatenate([s[:, None], tn, zs], axis=-1)
    p = field.params if params is None else params
    v = mlp_forward(field.net, p, x)
    diff = v - (z1 - z0)
    return ad.amean(ad.asum(diff * diff, axis=-1))


def sample(field: VelocityField, tau: TaskParam, count: int, cfg: FlowConfig, seed) -> np.ndarray:
    """Draw `count` task-conditioned latent codes by Euler integration."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, field.m))
    tn = np.broadcast_to(normalize_task(field, tau.as_array()), (count, 2))
    for i in range(cfg.n_steps):
        s = i * cfg.ds
        v = field_forward(field, s, tn, z)
        z = z + cfg.ds * v
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"flow state diverged at Euler step {i}")
    return z


def train_flow(field: VelocityField, taus, zs, cfg: FlowConfig, seed=None):
    """Fit the velocity field to encoded dataset latents; returns (field, curve)."""
    taus = np.asarray(taus, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    if len(zs) == 0:
        raise ValueError("no latent codes to fit")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    params = field.params
    state = AdamState.init(params.size, lr=cfg.lr)
    N = len(zs)
    curve = []
    for _ in range(cfg.epochs):
        idx = rng.choice(N, min(cfg.batch_size, N), replace=False)

        def loss(vs):
            return cfm_loss(field, taus[idx], zs[idx], rng, params=vs[0])

        lv, (g,) = ad.grad(loss, [params])
        state, params = adam_step(state, params, g, lr=cosine_lr(len(curve), cfg.epochs, cfg.lr, 0.01 * cfg.lr))
        curve.append(lv)
    return replace(field, params=params), curve
