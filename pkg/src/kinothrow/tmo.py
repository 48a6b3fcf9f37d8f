"""Decoder fine-tuning against the throwing objective and constraints.

The encoder and the latent flow stay frozen; only the decoder parameters
(basis coefficients, time basis, release head) are optimized.  Each step
draws fresh tasks, flow latents and evaluation times, evaluates the
objective and the squared-hinge constraint penalty on decoder jets, and
anchors the decoder to the dataset with the reconstruction loss.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import latentflow as lf
from .learncore import AdamState, adam_step
from .manifold import Decoder, Encoder, eta_head, psi_forward, recon_loss, theta_table
from .robot import PlanarArm, object_kinematics
from .task import TaskConfig, TaskSpace, constraint_values, landing_point


@dataclass(frozen=True)
class TmoConfig:
    """Sampling budget and schedule of the fine-tuning stage."""

    w_recon: float = 1.0
    n_tau: int = 8
    n_z: int = 4
    n_t: int = 16
    steps: int = 2000
    lr: float = 1e-4
    recon_batch: int = 64
    seed: int = 0

    def __post_init__(self):
        if min(self.n_tau, self.n_z, self.n_t, self.recon_batch) < 1 or self.steps < 0:
            raise ValueError("counts must be positive")
        if self.w_recon < 0:
            raise ValueError("w_recon must be non-negative")


def combine_per_item(psi, theta_k):
    """Contract per-item: psi (B, N_b) with theta (B, t..., N_b, n) -> (B, t..., n)."""
    tv = ad.value(theta_k)
    B = ad.value(psi).shape[0]
    extra = len(tv.shape) - 3  # time axes between batch and (N_b, n)
    shape = (B,) + (1,) * extra + (tv.shape[-2], 1)
    p = ad.reshape(psi, shape)
    return ad.asum(p * theta_k, axis=-2)


def _draw_latents(field, space: TaskSpace, fcfg: lf.FlowConfig, n_tau, n_z, rng, seed_key):
    """Frozen-flow latent draws; no gradient dependence by construction."""
    taus = [space.sample(rng) for _ in range(n_tau)]
    zs = []
    for i, tau in enumerate(taus):
        zs.append(lf.sample(field, tau, n_z, fcfg, seed=seed_key + (i,)))
    return taus, np.concatenate(zs)  # (n_tau * n_z, m)


def task_loss_sample(
    dec: Decoder,
    field,
    arm: PlanarArm,
    space: TaskSpace,
    tcfg: TaskConfig,
    cfg: TmoConfig,
    fcfg: lf.FlowConfig,
    seed,
    params=None,
):
    """Monte-Carlo estimate of the expected objective-plus-penalty.

    Returns (loss, diagnostics).  `params` is the trainable decoder
    triple (psi, theta, eta); the flow contributes only constant samples.
    """
    pp, tp, hp = params if params is not None else (None, None, None)
    seed_key = tuple(seed) if isinstance(seed, tuple) else (seed,)
    rng = np.random.default_rng(seed_key)
    taus, Z = _draw_latents(field, space, fcfg, cfg.n_tau, cfg.n_z, rng, seed_key)
    B = Z.shape[0]
    W = tcfg.weights_for(arm.n)
    psi = psi_forward(dec, Z, pp)
    eta_hat = eta_head(dec, Z, hp)  # (B,), differentiable through hp

    t_rand = rng.uniform(0.0, dec.T, (B, cfg.n_t))
    jets_r = theta_table(dec, t_rand, 3, tp)  # tuple of (B, n_t, N_b, n)
    jets_e = theta_table(dec, eta_hat, 3, tp)  # tuple of (B, N_b, n)
    qs_r = [combine_per_item(psi, j) for j in jets_r]
    qs_e = [_sq(combine_per_item(psi, _mid(j))) for j in jets_e]

    # constraints at the random times and at the release point
    C_r = constraint_values(arm, qs_r[0], qs_r[1], qs_r[2], qs_r[3], tcfg)
    C_e = constraint_values(arm, qs_e[0], qs_e[1], qs_e[2], qs_e[3], tcfg)
    rel_r = ad.relu(C_r)
    rel_e = ad.relu(C_e)
    pen = ad.amean(ad.asum(W * rel_r * rel_r, axis=-1)) + ad.amean(ad.asum(W * rel_e * rel_e, axis=-1))

    # objective at the release state
    q_rel, dq_rel = qs_e[0], qs_e[1]
    p_s, dp_s = object_kinematics(arm, q_rel, dq_rel)
    tau_arr = np.repeat(np.stack([t.as_array() for t in taus]), cfg.n_z, axis=0)  # (B, 2)
    land, _ = landing_point(p_s, dp_s, tau_arr[:, 1], tcfg)
    dx = land[..., 0] - tau_arr[:, 0]
    dz = land[..., 1] - tau_arr[:, 1]
    err = dx * dx + dz * dz
    reg = ad.amean(ad.asum(qs_r[3] * qs_r[3], axis=-1), axis=-1)
    J = ad.amean(err + tcfg.w1 * reg)

    loss = J + pen
    lv = float(np.asarray(ad.value(loss)).reshape(-1)[0])
    if not np.isfinite(lv):
        raise FloatingPointError(f"non-finite sampled task loss (seed {seed})")
    diags = {
        "task_error": float(np.mean(ad.value(err))),
        "penalty": float(np.asarray(ad.value(pen)).reshape(-1)[0]),
    }
    return loss, diags


def _mid(theta_k):
    """Insert a singleton time axis so release-point jets match combine_per_item."""
    v = ad.value(theta_k)
    return ad.reshape(theta_k, v.shape[:1] + (1,) + v.shape[1:])


def _sq(q):
    """Drop the singleton time axis again for (B, 1, n) release states."""
    v = ad.value(q)
    return ad.reshape(q, (v.shape[0], v.shape[-1]))


def finetune(
    enc: Encoder,
    dec: Decoder,
    field,
    dataset,
    arm: PlanarArm,
    space: TaskSpace,
    tcfg: TaskConfig,
    cfg: TmoConfig,
    fcfg: lf.FlowConfig,
    dmm_cfg,
    seed=None,
):
    """Fine-tune the decoder; encoder and flow stay bit-identical.

    Returns (decoder, logs) with one log row per step.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    trajs = dataset.trajectories()
    etas = dataset.release_times()
    N = len(dataset.entries)
    params = [dec.psi_params.copy(), dec.theta_params.copy(), dec.eta_params.copy()]
    states = [AdamState.init(p.size, lr=cfg.lr) for p in params]
    logs = []
    for step in range(cfg.steps):
        idx = rng.choice(N, min(cfg.recon_batch, N), replace=False)
        diag_box = {}

        def loss(vs):
            pp, tp, hp = vs
            task, diags = task_loss_sample(
                dec, field, arm, space, tcfg, cfg, fcfg, seed=(seed, step), params=(pp, tp, hp)
            )
            diag_box.update(diags)
            if cfg.w_recon == 0.0:
                return task
            recon = recon_loss(
                enc, dec, trajs[idx], etas[idx], dmm_cfg, params=(None, pp, tp, hp)
            )
            diag_box["recon"] = float(np.asarray(ad.value(recon)).reshape(-1)[0])
            return task + cfg.w_recon * recon

        lv, grads = ad.grad(loss, params)
        for k in range(3):
            states[k], params[k] = adam_step(states[k], params[k], grads[k])
        logs.append(
            {
                "step": step,
                "loss": lv,
                "task_error": diag_box.get("task_error"),
                "penalty": diag_box.get("penalty"),
                "recon": diag_box.get("recon", 0.0),
            }
        )
    out = replace(dec, psi_params=params[0], theta_params=params[1], eta_params=params[2])
    return out, logs
