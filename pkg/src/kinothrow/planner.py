"""Online planning with the trained models.

Millisecond-scale pipeline: sample task-conditioned latents, decode them
into candidate motions, batch-check every kinodynamic constraint with the
compiled kernel, reject non-compliant candidates, and splice the chosen
motion onto the robot's current phase with a short transition curve.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels, latentflow as lf
from .curves import BasisSet, TransitionCurve
from .manifold import DecodedMotion, Decoder, combine, eta_head, psi_forward, theta_table
from .robot import PlanarArm, object_kinematics
from .task import TaskConfig, TaskParam, constraint_layout, landing_point

# Table-style category labels -> constraint-layout categories
CATEGORY_LABELS = {
    "JL": "position",
    "JVL": "velocity",
    "JAL": "acceleration",
    "JJL": "jerk",
    "CVL": "ee_speed",
    "JTL": "torque",
    "COL": "clearance",
}


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-category worst constraint values plus task outcome for one motion."""

    feasible: bool
    worst: dict  # label -> signed worst value (<= 0 satisfied)
    task_error: float  # squared miss distance, m^2
    success: bool

    @staticmethod
    def from_values(C: np.ndarray, n: int, task_error: float, cfg: TaskConfig) -> "FeasibilityReport":
        lay = constraint_layout(n)
        worst = {label: float(np.max(C[..., lay[cat]])) for label, cat in CATEGORY_LABELS.items()}
        feasible = all(v <= 0.0 for v in worst.values())
        success = bool(np.sqrt(max(task_error, 0.0)) <= cfg.success_threshold)
        return FeasibilityReport(feasible, worst, float(task_error), success)


def generate(dec: Decoder, field, tau: TaskParam, K: int, fcfg: lf.FlowConfig, seed) -> list:
    """Sample K latent codes for the task and wrap them as motions."""
    zs = lf.sample(field, tau, K, fcfg, seed)
    etas = eta_head(dec, zs)
    return [DecodedMotion(dec, z, eta=e) for z, e in zip(zs, etas)]


def _motion_states(motion, grid):
    return [np.asarray(motion.eval(grid, k)) for k in range(4)]


def _release_error(motion, tau: TaskParam, arm: PlanarArm, cfg: TaskConfig) -> float:
    q = np.asarray(motion.eval(motion.eta))
    dq = np.asarray(motion.eval(motion.eta, 1))
    p_s, dp_s = object_kinematics(arm, q, dq)
    land, _ = landing_point(p_s, dp_s, tau.h, cfg)
    return float((land[0] - tau.r) ** 2 + (land[1] - tau.h) ** 2)


def check(motion, arm: PlanarArm, cfg: TaskConfig, tau: TaskParam = None, L: int = 100) -> FeasibilityReport:
    """Feasibility report for one motion on the uniform check grid."""
    grid = np.linspace(0.0, motion.T, L)
    qs = _motion_states(motion, grid)
    C = kernels.constraint_batch(arm, cfg, *qs)
    err = _release_error(motion, tau, arm, cfg) if tau is not None else np.nan
    return FeasibilityReport.from_values(C, arm.n, err, cfg)


def check_batch(dec: Decoder, motions: list, arm: PlanarArm, cfg: TaskConfig, tau: TaskParam, L: int = 100) -> list:
    """Reports for decoded motions sharing one decoder; one theta pass total."""
    grid = np.linspace(0.0, dec.T, L)
    zs = np.stack([m.z for m in motions])
    psi = psi_forward(dec, zs)  # (K, N_b)
    table = theta_table(dec, grid, 3)  # orders 0..3, each (L, N_b, n)
    qs = [combine(psi, th) for th in table]  # (K, L, n)
    C = kernels.constraint_batch(arm, cfg, *qs)  # (K, L, k)
    etas = np.array([m.eta for m in motions])
    table_e = theta_table(dec, etas, 1)  # (K, N_b, n) per order
    from .tmo import combine_per_item

    q_rel = combine_per_item(psi, table_e[0][:, None])[:, 0]
    dq_rel = combine_per_item(psi, table_e[1][:, None])[:, 0]
    p_s, dp_s = object_kinematics(arm, q_rel, dq_rel)
    land, _ = landing_point(p_s, dp_s, tau.h, cfg)
    errs = (land[:, 0] - tau.r) ** 2 + (land[:, 1] - tau.h) ** 2
    return [FeasibilityReport.from_values(C[i], arm.n, float(errs[i]), cfg) for i in range(len(motions))]


def rejection_sample(motions: list, reports: list) -> list:
    """Keep only the motions whose reports are feasible."""
    return [m for m, r in zip(motions, reports) if r.feasible]


def nearest_phase(q_c: np.ndarray, motions: list, grid: np.ndarray):
    """Closest on-trajectory posture before release: (index, time, distance).

    Exhaustive search over motions x grid times restricted to t < eta_i;
    ties broken by smaller motion index, then smaller time.
    """
    if not motions:
        raise ValueError("no motions to search")
    best = None
    for i, m in enumerate(motions):
        ts = grid[grid < m.eta]
        if ts.size == 0:
            continue
        qs = np.asarray(m.eval(ts))
        d = np.linalg.norm(qs - q_c, axis=-1)
        j = int(np.argmin(d))
        if best is None or d[j] < best[2]:
            best = (i, float(ts[j]), float(d[j]))
    if best is None:
        raise ValueError("every motion releases before the first grid time")
    return best


def plan_transition(
    phase_now,
    phase_target,
    arm: PlanarArm,
    cfg: TaskConfig,
    seed,
    attempts: int = 32,
    duration: float = 1.0,
    grid_points: int = 50,
    basis: BasisSet = None,
):
    """Constraint-checked splice between two (q, dq) phases.

    Tries the zero-residual curve first, then standard-normal residual
    draws; returns (TransitionCurve | None, status, worst violation).
    """
    q0, dq0 = (np.asarray(p, dtype=np.float64) for p in phase_now)
    qT, dqT = (np.asarray(p, dtype=np.float64) for p in phase_target)
    basis = basis or BasisSet()
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, duration, grid_points)
    worst = np.inf
    for attempt in range(1 + attempts):
        w = np.zeros((basis.count, arm.n)) if attempt == 0 else rng.standard_normal((basis.count, arm.n))
        curve = TransitionCurve(q0, dq0, qT, dqT, w, duration, basis)
        C = kernels.constraint_batch(arm, cfg, *[curve.eval(grid, k) for k in range(4)])
        v = float(np.max(C))
        worst = min(worst, v)
        if v <= 0.0:
            return curve, "success", v
    return None, "no feasible transition", worst


@dataclass(frozen=True)
class AdaptationPlan:
    """Replanned schedule: transition into a sampled motion mid-trajectory."""

    transition: TransitionCurve
    motion_index: int
    attach_time: float  # time parameter of the selected motion at hand-off
    motion: object
    t_now: float
    planning_seconds: float

    @property
    def eta_global(self) -> float:
        """Release moment on the wall clock of the composite schedule."""
        return self.t_now + self.transition.T + (self.motion.eta - self.attach_time)

    def eval(self, t, order: int = 0):
        """Composite schedule in global time (transition, then the motion)."""
        tv = np.asarray(t, dtype=np.float64)
        t_join = self.t_now + self.transition.T
        local_tr = np.clip(tv - self.t_now, 0.0, self.transition.T)
        local_m = np.clip(self.attach_time + (tv - t_join), 0.0, self.motion.T)
        left = self.transition.eval(local_tr, order)
        right = self.motion.eval(local_m, order)
        mask = np.asarray(tv <= t_join)[..., None]
        return np.where(mask, left, right)


def adapt(
    state,
    tau_new: TaskParam,
    dec: Decoder,
    field,
    arm: PlanarArm,
    cfg: TaskConfig,
    fcfg: lf.FlowConfig,
    seed,
    K: int = 100,
    L: int = 100,
    transition_duration: float = 1.0,
):
    """Full replanning pipeline; returns (AdaptationPlan | None, status)."""
    q_c, dq_c, t_now = np.asarray(state[0]), np.asarray(state[1]), float(state[2])
    t0 = time.perf_counter()
    motions = generate(dec, field, tau_new, K, fcfg, seed)
    reports = check_batch(dec, motions, arm, cfg, tau_new, L)
    kept = [m for m, r in zip(motions, reports) if r.feasible and r.success]
    if not kept:
        return None, "no feasible motion after rejection sampling"
    grid = np.linspace(0.0, dec.T, L)
    try:
        i_star, t_star, _ = nearest_phase(q_c, kept, grid)
    except ValueError as e:
        return None, str(e)
    target = kept[i_star]
    phase_target = (np.asarray(target.eval(t_star)), np.asarray(target.eval(t_star, 1)))
    curve, status, _ = plan_transition(
        (q_c, dq_c), phase_target, arm, cfg, seed=(seed, 1), duration=transition_duration
    )
    if curve is None:
        return None, status
    plan = AdaptationPlan(curve, i_star, t_star, target, t_now, time.perf_counter() - t0)
    return plan, "success"


def evaluate(
    dec: Decoder,
    field,
    arm: PlanarArm,
    cfg: TaskConfig,
    grids: dict,
    K: int,
    fcfg: lf.FlowConfig,
    seed,
    L: int = 100,
):
    """Aggregate metrics over task grids; one row per grid name.

    Row keys: SR (%), error (m), per-category satisfaction rates (%),
    retention (%) under rejection sampling (accepted = checker-feasible
    and on-target, the same rule `adapt` uses), RS_SR (%) among the
    accepted samples, gen_seconds per batch of K.
    """
    rows = []
    for name, grid_tasks in grids.items():
        reports = []
        gen_times = []
        for ti, tau in enumerate(grid_tasks):
            t0 = time.perf_counter()
            motions = generate(dec, field, tau, K, fcfg, seed=(seed, ti))
            gen_times.append(time.perf_counter() - t0)
            reports.extend(check_batch(dec, motions, arm, cfg, tau, L))
        errs = np.array([r.task_error for r in reports])
        feas = np.array([r.feasible for r in reports])
        succ = np.array([r.success for r in reports])
        row = {
            "set": name,
            "SR": 100.0 * float(np.mean(succ)),
            "error": float(np.mean(np.sqrt(np.maximum(errs, 0.0)))),
            "retention": 100.0 * float(np.mean(feas & succ)),
            "RS_SR": 100.0 * float(np.mean(succ[feas & succ])) if (feas & succ).any() else 0.0,
            "gen_seconds": float(np.mean(gen_times)),
        }
        for label in CATEGORY_LABELS:
            row[label] = 100.0 * float(np.mean([r.worst[label] <= 0.0 for r in reports]))
        rows.append(row)
    return rows
