"""Offline collection of feasible throwing motions.

Each motion is a via-point curve whose boundary postures, residual
coefficients and release time are optimized jointly with Adam; joint
limits are enforced by a sigmoid reparameterization and all remaining
constraints through a grid-averaged squared-hinge penalty.  Successful
motions are trimmed at the release time and extended with a braking
segment to a common horizon so every dataset entry shares (T, L).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .curves import BasisSet, TransitionCurve, ViaPointCurve, via_eval
from .learncore import AdamState, adam_step, cosine_lr
from .robot import PlanarArm, object_kinematics
from .task import TaskConfig, TaskParam, TaskSpace, constraint_values, landing_point


@dataclass(frozen=True)
class PiecewiseCurve:
    """Two-piece composite: `first` on [0, split], `second` shifted after it."""

    first: object
    second: object
    split: float

    @property
    def T(self) -> float:
        return self.split + self.second.T

    def eval(self, t, order: int = 0):
        tv = np.asarray(t, dtype=np.float64)
        left = self.first.eval(np.clip(tv, 0.0, self.split), order)
        right = self.second.eval(np.clip(tv - self.split, 0.0, self.second.T), order)
        mask = (tv <= self.split)[..., None]
        return np.where(mask, left, right)


@dataclass(frozen=True)
class Motion:
    """A throwing motion: an evaluable curve plus its release time."""

    source: object
    eta: float
    T: float

    def __post_init__(self):
        if not 0.0 < self.eta < self.T:
            raise ValueError("release time must lie strictly inside (0, T)")

    def eval(self, t, order: int = 0):
        return self.source.eval(t, order)


@dataclass(frozen=True)
class CollectConfig:
    """Budget and hyperparameters of the offline collection stage."""

    attempts: int = 30
    max_iters: int = 10000
    check_every: int = 25
    T: float = 3.0
    L: int = 100
    basis_count: int = 20
    eta_init: float = 1.2
    w_eta: float = 0.05
    lr: float = 3e-2
    retime_retries: int = 32
    seed: int = 0

    def __post_init__(self):
        if min(self.attempts, self.max_iters, self.check_every, self.L, self.basis_count) < 1:
            raise ValueError("counts must be positive")
        if not 0.0 < self.eta_init < self.T:
            raise ValueError("eta_init must lie inside (0, T)")


@dataclass(frozen=True)
class OptResult:
    motion: Motion
    J: float
    max_violation: float
    status: str
    iterations: int

    @property
    def success(self) -> bool:
        return self.status == "success"


@dataclass(frozen=True)
class DatasetEntry:
    tau: TaskParam
    traj: np.ndarray  # (L, n) joint samples on the uniform grid
    eta: float
    motion: Motion  # composite curve that regenerates traj


@dataclass(frozen=True)
class Dataset:
    entries: tuple
    T: float
    L: int
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.entries[0].traj.shape[-1]

    def trajectories(self) -> np.ndarray:
        return np.stack([e.traj for e in self.entries])

    def release_times(self) -> np.ndarray:
        return np.array([e.eta for e in self.entries])

    def tasks(self) -> np.ndarray:
        return np.stack([e.tau.as_array() for e in self.entries])


def random_boundary_init(arm: PlanarArm, seed) -> tuple:
    """Random boundary postures strictly inside joint limits (sigmoid draw)."""
    rng = np.random.default_rng(seed)
    lo, hi = arm.limits.q_min, arm.limits.q_max
    v0 = rng.standard_normal(arm.n)
    vT = rng.standard_normal(arm.n)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    return lo + sig(v0) * (hi - lo), lo + sig(vT) * (hi - lo)


def _logit(x):
    return float(np.log(x / (1.0 - x)))


def _batch_loss_fn(arm, tau: TaskParam, tcfg: TaskConfig, ccfg: CollectConfig, basis, grid, W):
    """Summed per-item loss; items are fully decoupled, so batched Adam
    reproduces independent sequential runs exactly."""
    lo, hi = arm.limits.q_min, arm.limits.q_max
    T, L = ccfg.T, ccfg.L

    def loss_terms(vs):
        v0, vT, w, nu = vs
        m = ad.value(v0).shape[0]
        n = arm.n
        q0 = lo + ad.sigmoid(v0) * (hi - lo)
        qT = lo + ad.sigmoid(vT) * (hi - lo)
        eta = float(T) * ad.sigmoid(nu)
        q0r = ad.reshape(q0, (m, 1, n))
        qTr = ad.reshape(qT, (m, 1, n))
        qs = [via_eval(q0r, qTr, w, T, basis, grid, k) for k in range(4)]
        C = constraint_values(arm, qs[0], qs[1], qs[2], qs[3], tcfg)
        r = ad.relu(C)
        pen = ad.amean(ad.asum(W * r * r, axis=-1), axis=-1)  # grid-averaged, per item
        q_eta = via_eval(q0, qT, w, T, basis, eta, 0, per_item=True)
        dq_eta = via_eval(q0, qT, w, T, basis, eta, 1, per_item=True)
        p_s, dp_s = object_kinematics(arm, q_eta, dq_eta)
        land, _ = landing_point(p_s, dp_s, tau.h, tcfg)
        dx = land[..., 0] - tau.r
        dz = land[..., 1] - tau.h
        err = dx * dx + dz * dz
        reg = ad.amean(ad.asum(qs[3] * qs[3], axis=-1), axis=-1)
        J = err + tcfg.w1 * reg
        return J, pen, eta, err, C

    def loss(vs):
        J, pen, eta, _, _ = loss_terms(vs)
        return ad.asum(J + pen + ccfg.w_eta * eta)

    return loss, loss_terms


def _params_to_motion(arm, ccfg, basis, v0, vT, w, nu):
    lo, hi = arm.limits.q_min, arm.limits.q_max
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    q0 = lo + sig(v0) * (hi - lo)
    qT = lo + sig(vT) * (hi - lo)
    eta = ccfg.T * float(sig(nu))
    curve = ViaPointCurve(q0, qT, w, ccfg.T, basis)
    return Motion(curve, eta, ccfg.T)


def optimize_batch(arm: PlanarArm, tau: TaskParam, ccfg: CollectConfig, tcfg: TaskConfig, seeds) -> list:
    """Optimize one motion per seed simultaneously; returns list of OptResult."""
    m = len(seeds)
    n = arm.n
    basis = BasisSet(ccfg.basis_count)
    grid = np.linspace(0.0, ccfg.T, ccfg.L)
    W = tcfg.weights_for(n)
    loss, loss_terms = _batch_loss_fn(arm, tau, tcfg, ccfg, basis, grid, W)

    inits = [random_boundary_init(arm, s) for s in seeds]
    lo, hi = arm.limits.q_min, arm.limits.q_max
    inv = lambda q: np.log((q - lo) / (hi - q))
    v0 = np.stack([inv(a) for a, _ in inits])
    vT = np.stack([inv(b) for _, b in inits])
    w = np.zeros((m, ccfg.basis_count, n))
    nu = np.full(m, _logit(ccfg.eta_init / ccfg.T))

    params = [v0, vT, w, nu]
    states = [AdamState.init(p.size, lr=ccfg.lr) for p in params]
    done = np.zeros(m, dtype=bool)
    snap = [None] * m
    snap_iter = np.full(m, -1)
    snap_stats = [None] * m

    def check(it):
        J, pen, eta, err, C = loss_terms(params)
        pos_err = np.sqrt(np.maximum(ad.value(err), 0.0))
        maxviol = np.max(ad.value(C), axis=(1, 2))
        ok = (pos_err <= tcfg.opt_success_threshold) & (maxviol <= 0.0)
        for i in range(m):
            if ok[i] and not done[i]:
                done[i] = True
                snap[i] = [p[i].copy() for p in params]
                snap_iter[i] = it
                snap_stats[i] = (float(ad.value(J)[i]), float(maxviol[i]))
        return J, C

    it = 0
    while it < ccfg.max_iters:
        if it % ccfg.check_every == 0:
            check(it)
            if done.all():
                break
        lv, grads = ad.grad(loss, params)
        lr = cosine_lr(it, ccfg.max_iters, ccfg.lr)
        for k in range(len(params)):
            st, flat = adam_step(states[k], params[k].ravel(), grads[k].ravel(), lr=lr)
            states[k] = st
            params[k] = flat.reshape(params[k].shape)
        it += 1
    if not done.all():
        J, C = check(it)
        Jv = ad.value(J)
        Cv = ad.value(C)

    results = []
    for i in range(m):
        if done[i]:
            pv = snap[i]
            Ji, viol = snap_stats[i]
            status, iters = "success", int(snap_iter[i])
        else:
            pv = [p[i] for p in params]
            Ji = float(Jv[i])
            viol = float(np.max(Cv[i]))
            status, iters = "max_iters", it
        motion = _params_to_motion(arm, ccfg, basis, *pv)
        results.append(OptResult(motion, Ji, viol, status, iters))
    return results


def optimize_motion(arm: PlanarArm, tau: TaskParam, ccfg: CollectConfig, tcfg: TaskConfig, seed) -> OptResult:
    """Single-seed trajectory optimization (batch of width one)."""
    return optimize_batch(arm, tau, ccfg, tcfg, [seed])[0]


def retime_trim_extend(motion: Motion, arm: PlanarArm, ccfg: CollectConfig, tcfg: TaskConfig, seed=0):
    """Trim at release and append a braking segment up to the common horizon.

    Returns (Motion, status).  The braking piece decelerates toward a
    rest posture placed along the motion direction; if the zero-residual
    piece violates constraints, small random residuals are retried.
    """
    eta = motion.eta
    if eta >= ccfg.T:
        return None, "release beyond horizon"
    q_eta = motion.eval(eta)
    dq_eta = motion.eval(eta, 1)
    dT = ccfg.T - eta
    q_stop = np.clip(
        q_eta + dq_eta * dT / 3.0, arm.limits.q_min, arm.limits.q_max
    )
    basis = BasisSet(ccfg.basis_count)
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, dT, ccfg.L)
    for attempt in range(1 + ccfg.retime_retries):
        w = np.zeros((ccfg.basis_count, arm.n)) if attempt == 0 else 0.05 * rng.standard_normal((ccfg.basis_count, arm.n))
        stop = TransitionCurve(q_eta, dq_eta, q_stop, np.zeros(arm.n), w, dT, basis)
        qs = [stop.eval(grid, k) for k in range(4)]
        C = constraint_values(arm, qs[0], qs[1], qs[2], qs[3], tcfg)
        if np.max(C) <= 0.0:
            composite = PiecewiseCurve(motion.source, stop, eta)
            return Motion(composite, eta, ccfg.T), "success"
    return None, "stop segment infeasible"


def collect(arm: PlanarArm, space: TaskSpace, ccfg: CollectConfig, tcfg: TaskConfig):
    """Run collection over the seen task grid; returns (Dataset, report rows)."""
    if not space.seen_grid:
        raise ValueError("task space has no seen grid")
    grid_t = np.linspace(0.0, ccfg.T, ccfg.L)
    entries = []
    report = []
    for ti, tau in enumerate(space.seen_grid):
        t0 = time.perf_counter()
        seeds = [(ccfg.seed, ti, a) for a in range(ccfg.attempts)]
        results = optimize_batch(arm, tau, ccfg, tcfg, seeds)
        n_opt = sum(r.success for r in results)
        n_kept = 0
        for ai, r in enumerate(results):
            if not r.success:
                continue
            retimed, status = retime_trim_extend(r.motion, arm, ccfg, tcfg, seed=(ccfg.seed, ti, ai, 1))
            if status != "success":
                continue
            traj = retimed.eval(grid_t)
            entries.append(DatasetEntry(tau, traj, retimed.eta, retimed))
            n_kept += 1
        report.append(
            {
                "r": tau.r,
                "h": tau.h,
                "attempts": ccfg.attempts,
                "optimized": n_opt,
                "kept": n_kept,
                "seconds": time.perf_counter() - t0,
            }
        )
    meta = {"seed": ccfg.seed, "attempts": ccfg.attempts, "n": arm.n}
    return Dataset(tuple(entries), ccfg.T, ccfg.L, meta), report
