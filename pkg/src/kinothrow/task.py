"""Throwing-task objective: ballistic flight time, miss distance, constraints.

A task is a planar target (r, h): range along +x and height above the
base.  The object leaves the hand at time eta with the instantaneous
release state and flies ballistically.  Everything here runs on plain
ndarrays or autodiff Vars so the same code serves fast feasibility
checking and gradient-based motion optimization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .robot import PlanarArm, clearances, ee_velocity, inverse_dynamics, object_kinematics


@dataclass(frozen=True)
class TaskParam:
    """Planar throwing target: range r (m) and height h (m)."""

    r: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.h])


@dataclass(frozen=True)
class TaskSpace:
    """Rectangle of admissible targets plus the finite training grid."""

    r_lo: float
    r_hi: float
    h_lo: float
    h_hi: float
    seen_grid: tuple = ()

    def __post_init__(self):
        if not (self.r_lo < self.r_hi and self.h_lo <= self.h_hi):
            raise ValueError("degenerate task-space rectangle")
        for tau in self.seen_grid:
            if not self.contains(tau):
                raise ValueError(f"seen-grid task {tau} outside rectangle")

    def contains(self, tau: TaskParam) -> bool:
        return (self.r_lo <= tau.r <= self.r_hi) and (self.h_lo <= tau.h <= self.h_hi)

    def sample(self, rng: np.random.Generator) -> TaskParam:
        return TaskParam(
            float(rng.uniform(self.r_lo, self.r_hi)),
            float(rng.uniform(self.h_lo, self.h_hi)),
        )

    @staticmethod
    def with_grid(r_lo, r_hi, h_lo, h_hi, n_r: int, n_h: int) -> "TaskSpace":
        grid = tuple(
            TaskParam(float(r), float(h))
            for r in np.linspace(r_lo, r_hi, n_r)
            for h in np.linspace(h_lo, h_hi, n_h)
        )
        return TaskSpace(r_lo, r_hi, h_lo, h_hi, grid)


# constraint-vector category order; positions have two sides
_CATEGORIES = ("position", "velocity", "acceleration", "jerk", "torque", "ee_speed", "clearance")


def constraint_layout(n: int) -> dict:
    """Stable index map {category: slice} into the k = 6n+2 vector."""
    sizes = {
        "position": 2 * n,
        "velocity": n,
        "acceleration": n,
        "jerk": n,
        "torque": n,
        "ee_speed": 1,
        "clearance": 1,
    }
    out, start = {}, 0
    for cat in _CATEGORIES:
        out[cat] = slice(start, start + sizes[cat])
        start += sizes[cat]
    return out


def constraint_dim(n: int) -> int:
    return 6 * n + 2


@dataclass(frozen=True)
class ConstraintVector:
    """Signed constraint evaluations (<= 0 satisfied) with a stable index map.

    values has trailing axis length 6n+2; it may be an ndarray or an
    autodiff Var (during optimization).
    """

    values: object
    n: int

    def __post_init__(self):
        if ad.value(self.values).shape[-1] != constraint_dim(self.n):
            raise ValueError("constraint vector has wrong length")

    def category(self, name: str):
        return self.values[..., constraint_layout(self.n)[name]]

    @property
    def satisfied(self) -> np.ndarray:
        return np.all(ad.value(self.values) <= 0.0, axis=-1)


def _raw(C):
    return C.values if isinstance(C, ConstraintVector) else C


@dataclass(frozen=True)
class TaskConfig:
    """Weights, margins and thresholds for the throwing objective."""

    g: float = 9.81
    w1: float = 1e-3
    W: np.ndarray = None
    margin_frac: float = 0.01
    clearance_margin: float = 0.02
    success_threshold: float = 0.04
    opt_success_threshold: float = 0.01

    def __post_init__(self):
        if self.W is not None:
            object.__setattr__(self, "W", np.asarray(self.W, dtype=np.float64))
            if np.any(self.W < 0):
                raise ValueError("penalty weights must be non-negative")
        for name in ("g", "w1", "margin_frac", "clearance_margin", "success_threshold", "opt_success_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.margin_frac >= 1:
            raise ValueError("margin_frac must be < 1")

    def weights_for(self, n: int) -> np.ndarray:
        """Penalty weights, defaulting to 1 / 0.1 (torque) / 10 (clearance)."""
        if self.W is not None:
            if self.W.shape != (constraint_dim(n),):
                raise ValueError("W has wrong length for this arm")
            return self.W
        lay = constraint_layout(n)
        w = np.ones(constraint_dim(n))
        w[lay["torque"]] = 0.1
        w[lay["clearance"]] = 10.0
        return w


def flight_time(p_release, v_release, target_h, cfg: TaskConfig):
    """Ballistic time of flight down to the target height plane.

    Returns (dt, reachable).  dt is the larger root of
    p_z + v_z dt - g dt^2 / 2 = target_h.  When the apex stays below the
    target the root is complex; we then return the (clamped) apex time so
    downstream objectives stay finite and differentiable, and flag the
    case via reachable=False.
    """
    p = p_release if isinstance(p_release, ad.Var) else np.asarray(p_release, dtype=np.float64)
    v = v_release if isinstance(v_release, ad.Var) else np.asarray(v_release, dtype=np.float64)
    g = float(cfg.g)
    pz = p[..., 1]
    vz = v[..., 1]
    disc = vz * vz + 2.0 * g * (pz - target_h)
    reachable = ad.value(disc) >= 0.0
    # small floor keeps the sqrt gradient finite on the unreachable branch
    root = (vz + ad.sqrt(ad.maximum(disc, 1e-18))) / g
    apex = ad.maximum(vz, 0.0) / g
    dt = ad.where(reachable, root, apex)
    return dt, reachable


def landing_point(p_release, v_release, target_h, cfg: TaskConfig):
    """Ballistic impact point on the target height plane; (point (..,2), reachable)."""
    dt, reachable = flight_time(p_release, v_release, target_h, cfg)
    p = p_release if isinstance(p_release, ad.Var) else np.asarray(p_release, dtype=np.float64)
    v = v_release if isinstance(v_release, ad.Var) else np.asarray(v_release, dtype=np.float64)
    x = p[..., 0] + v[..., 0] * dt
    z = p[..., 1] + v[..., 1] * dt - 0.5 * float(cfg.g) * dt * dt
    return ad.stack([x, z], axis=-1), reachable


def task_error(motion, eta, tau: TaskParam, arm: PlanarArm, cfg: TaskConfig):
    """Squared planar miss distance of the throw released at time eta.

    `motion` is any callable f(t, order) -> joint values, e.g. a curve's
    eval method.  When the target height is unreachable the miss is
    measured from the apex of the arc (finite, differentiable fallback).
    """
    q = motion(eta, 0)
    dq = motion(eta, 1)
    p_s, dp_s = object_kinematics(arm, q, dq)
    land, _ = landing_point(p_s, dp_s, tau.h, cfg)
    dx = land[..., 0] - tau.r
    dz = land[..., 1] - tau.h
    return dx * dx + dz * dz


def jerk_regularizer(motion, T: float, quad_grid: np.ndarray):
    """(1/T) integral of ||dddq||^2 as a uniform-grid Riemann mean."""
    dddq = motion(quad_grid, 3)
    return ad.amean(ad.asum(dddq * dddq, axis=-1))


def objective(motion, eta, tau: TaskParam, arm: PlanarArm, cfg: TaskConfig, quad_grid: np.ndarray, T: float = None):
    """Throwing objective: miss distance plus jerk smoothness penalty."""
    if T is None:
        T = float(quad_grid[-1])
    err = task_error(motion, eta, tau, arm, cfg)
    if cfg.w1 == 0.0:
        return err
    return err + cfg.w1 * jerk_regularizer(motion, T, quad_grid)


def _min_last(x):
    """Differentiable min over the trailing axis."""
    k = ad.value(x).shape[-1]
    out = x[..., 0]
    for i in range(1, k):
        out = ad.minimum(out, x[..., i])
    return out


def constraint_vector(arm: PlanarArm, q, dq, ddq, dddq, cfg: TaskConfig) -> ConstraintVector:
    """Signed constraints with margins baked in, wrapped with the index map."""
    return ConstraintVector(constraint_values(arm, q, dq, ddq, dddq, cfg), arm.n)


def constraint_values(arm: PlanarArm, q, dq, ddq, dddq, cfg: TaskConfig):
    """Signed constraint values with safety margins baked in, shape (..., 6n+2).

    Entry <= 0 means satisfied.  Limit-type entries are
    |value| - limit + margin_frac * limit; positions are two-sided with a
    range-proportional inset; clearance is min pair distance versus the
    configured floor plus clearance_margin.
    """
    lim = arm.limits
    mf = cfg.margin_frac
    delta = mf * (lim.q_max - lim.q_min) / 2.0
    lower = (lim.q_min + delta) - q
    upper = q - (lim.q_max - delta)
    vel = ad.absolute(dq) - lim.dq_max * (1.0 - mf)
    acc = ad.absolute(ddq) - lim.ddq_max * (1.0 - mf)
    jerk = ad.absolute(dddq) - lim.dddq_max * (1.0 - mf)
    tau_ = ad.absolute(inverse_dynamics(arm, q, dq, ddq)) - lim.tau_max * (1.0 - mf)
    vee = ee_velocity(arm, q, dq)
    speed = ad.sqrt(ad.asum(vee * vee, axis=-1) + 1e-18) - lim.v_ee_max * (1.0 - mf)
    if arm.collision_pairs:
        clear = (lim.min_clearance + cfg.clearance_margin) - _min_last(clearances(arm, q))
    else:
        shape = ad.value(q).shape[:-1]
        clear = np.full(shape, -np.inf) if shape else np.float64(-np.inf)
    return ad.concat(
        [lower, upper, vel, acc, jerk, tau_, _e1(speed), _e1(clear)], axis=-1
    )


def _e1(x):
    if isinstance(x, ad.Var):
        return ad.reshape(x, ad.value(x).shape + (1,))
    return np.asarray(x)[..., None]


def penalty(C, W):
    """Weighted squared hinge: sum_i W_i max(C_i, 0)^2 over the trailing axis."""
    r = ad.relu(_raw(C))
    return ad.asum(W * r * r, axis=-1)


def feasible(C, tol: float = 0.0) -> np.ndarray:
    """Boolean satisfaction of a constraint vector (trailing axis)."""
    return np.all(ad.value(_raw(C)) <= tol, axis=-1)
