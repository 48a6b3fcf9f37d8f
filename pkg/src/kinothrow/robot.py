"""Planar N-link arm: kinematics, dynamics, limits, self-collision clearance.

Geometry lives in the vertical x-z plane; gravity acts along -z.  Joint i
(0-based) rotates link i whose proximal end sits at the chain point x_i,
with x_0 the fixed base at the origin.  All evaluation functions accept
plain ndarrays or autodiff Vars and arbitrary leading batch dimensions
(last axis = joints), so the same code serves fast checking and
gradient-based optimization.

Mass matrix assembly uses per-link COM Jacobians; the Coriolis vector is
assembled from Christoffel symbols of M with analytic position Jacobians,
which makes the energy-conservation property hold to integrator accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class Limits:
    """Kinodynamic bounds of the plant (all magnitudes, strictly positive)."""

    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    ddq_max: np.ndarray
    dddq_max: np.ndarray
    v_ee_max: float
    tau_max: np.ndarray
    min_clearance: float
    w_ee_max: float = np.inf  # planar default: angular EE speed unconstrained

    def __post_init__(self):
        for name in ("q_min", "q_max", "dq_max", "ddq_max", "dddq_max", "tau_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be < q_max componentwise")
        for name in ("dq_max", "ddq_max", "dddq_max", "tau_max"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"{name} must be strictly positive")
        if self.v_ee_max <= 0 or self.min_clearance <= 0 or self.w_ee_max <= 0:
            raise ValueError("scalar limits must be strictly positive")


@dataclass(frozen=True)
class PlanarArm:
    """Planar open chain with point of interest (held object) offset p_b."""

    link_lengths: np.ndarray
    link_masses: np.ndarray
    com_offsets: np.ndarray
    link_inertias: np.ndarray
    limits: Limits
    gravity: float = 9.81
    p_b: np.ndarray = field(default_factory=lambda: np.zeros(2))
    collision_pairs: tuple = ()

    def __post_init__(self):
        for name in ("link_lengths", "link_masses", "com_offsets", "link_inertias", "p_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.link_lengths.shape[0]
        if n < 2:
            raise ValueError("need at least 2 links")
        if not (np.all(self.link_lengths > 0) and np.all(self.link_masses > 0) and np.all(self.link_inertias > 0)):
            raise ValueError("lengths, masses, inertias must be positive")
        if np.any(self.com_offsets < 0) or np.any(self.com_offsets > self.link_lengths):
            raise ValueError("com_offsets must lie within the link")
        pairs = tuple(tuple(sorted(p)) for p in self.collision_pairs)
        for a, b in pairs:
            if not (0 <= a < n and 0 <= b < n) or abs(a - b) <= 1:
                raise ValueError(f"invalid collision pair {(a, b)}: identical or adjacent links")
        object.__setattr__(self, "collision_pairs", pairs)

    @property
    def n(self) -> int:
        return self.link_lengths.shape[0]

    @property
    def reach(self) -> float:
        return float(np.sum(self.link_lengths))

    def _cum(self) -> np.ndarray:
        # theta = q @ _cum gives cumulative angle sums
        return np.triu(np.ones((self.n, self.n)))


def default_arm(n: int = 3) -> PlanarArm:
    """Desk-scale 3-link arm; every quantity has a closed form."""
    if n == 3:
        lengths = np.array([0.5, 0.4, 0.3])
        masses = np.array([2.0, 1.5, 1.0])
        tau = np.array([40.0, 25.0, 10.0])
        pairs = ((0, 2),)
    else:
        lengths = np.full(n, 1.2 / n)
        masses = np.linspace(2.0, 1.0, n)
        tau = np.linspace(40.0, 10.0, n)
        pairs = tuple((i, j) for i in range(n) for j in range(i + 2, n))
    limits = Limits(
        q_min=np.full(n, -np.pi),
        q_max=np.full(n, np.pi),
        dq_max=np.full(n, 3.0),
        ddq_max=np.full(n, 15.0),
        dddq_max=np.full(n, 150.0),
        v_ee_max=4.0,
        tau_max=tau,
        min_clearance=0.02,
    )
    return PlanarArm(
        link_lengths=lengths,
        link_masses=masses,
        com_offsets=lengths / 2.0,
        link_inertias=masses * lengths**2 / 12.0,
        limits=limits,
        p_b=np.array([0.1, 0.0]),
        collision_pairs=pairs,
    )


def _check_dim(x, n, name):
    if ad.value(x).shape[-1] != n:
        raise ValueError(f"{name} last axis must have length {n}")


def chain_points(arm: PlanarArm, q):
    """Chain geometry: (jx, jz, cx, cz, theta).

    jx/jz have shape (..., n+1): joint pivots including the base at
    index 0.  cx/cz shape (..., n): link COM positions.  theta (..., n):
    cumulative link angles.
    """
    _check_dim(q, arm.n, "q")
    cum = arm._cum()
    theta = ad.matmul(q, cum)
    ct, st = ad.cos(theta), ad.sin(theta)
    ex = arm.link_lengths * ct
    ez = arm.link_lengths * st
    sx = ad.matmul(ex, cum)  # x_1..x_n
    sz = ad.matmul(ez, cum)
    zero = np.zeros(ad.value(sx).shape[:-1] + (1,))
    jx = ad.concat([zero, sx], axis=-1)
    jz = ad.concat([zero, sz], axis=-1)
    cx = sx - ex + arm.com_offsets * ct
    cz = sz - ez + arm.com_offsets * st
    return jx, jz, cx, cz, theta


def fk(arm: PlanarArm, q):
    """Forward kinematics: (ee_position (..,2), ee_angle, joint_positions).

    joint_positions stacks the base and every joint pivot plus the tip,
    shape (..., n+1, 2).
    """
    jx, jz, _, _, theta = chain_points(arm, q)
    ee = ad.stack([jx[..., -1], jz[..., -1]], axis=-1)
    pts = ad.stack([jx, jz], axis=-1)
    return ee, theta[..., -1], pts


def object_kinematics(arm: PlanarArm, q, dq):
    """World position and velocity of the held object; (p_s, dp_s), (.., 2)."""
    _check_dim(dq, arm.n, "dq")
    jx, jz, _, _, theta = chain_points(arm, q)
    th = theta[..., -1]
    ct, st = ad.cos(th), ad.sin(th)
    pbx, pbz = float(arm.p_b[0]), float(arm.p_b[1])
    px = jx[..., -1] + ct * pbx - st * pbz
    pz = jz[..., -1] + st * pbx + ct * pbz
    # every joint rotates the object about its pivot
    pivx = jx[..., :-1]
    pivz = jz[..., :-1]
    dpx = ad.asum(-(_e(pz) - pivz) * dq, axis=-1)
    dpz = ad.asum((_e(px) - pivx) * dq, axis=-1)
    return ad.stack([px, pz], axis=-1), ad.stack([dpx, dpz], axis=-1)


def ee_velocity(arm: PlanarArm, q, dq):
    """Planar linear velocity of the end-effector point, shape (.., 2)."""
    jx, jz, _, _, _ = chain_points(arm, q)
    tipx, tipz = jx[..., -1], jz[..., -1]
    dpx = ad.asum(-(_e(tipz) - jz[..., :-1]) * dq, axis=-1)
    dpz = ad.asum((_e(tipx) - jx[..., :-1]) * dq, axis=-1)
    return ad.stack([dpx, dpz], axis=-1)


def _e(x):
    """Append a broadcasting axis."""
    if isinstance(x, ad.Var):
        return ad.reshape(x, ad.value(x).shape + (1,))
    return np.asarray(x)[..., None]


def _com_diffs(arm: PlanarArm, jx, jz, cx, cz):
    """Dx/Dz[..., i, p] = COM p minus pivot of joint i."""
    n = arm.n
    piv_x = jx[..., :n]
    piv_z = jz[..., :n]
    Dx = _r2(cx) - _e(piv_x)
    Dz = _r2(cz) - _e(piv_z)
    return Dx, Dz


def _r2(x):
    """Insert a broadcasting axis before the last one."""
    v = ad.value(x)
    return ad.reshape(x, v.shape[:-1] + (1, v.shape[-1])) if isinstance(x, ad.Var) else np.asarray(x)[..., None, :]


def dynamics_terms(arm: PlanarArm, q, dq):
    """(M, c, h): mass matrix, Coriolis/centrifugal vector, gravity vector.

    M via per-link COM Jacobians, c via Christoffel symbols of M with
    analytic dM/dq, h from the potential-energy gradient.
    """
    _check_dim(q, arm.n, "q")
    _check_dim(dq, arm.n, "dq")
    n = arm.n
    jx, jz, cx, cz, _ = chain_points(arm, q)
    Dx, Dz = _com_diffs(arm, jx, jz, cx, cz)

    mask = np.triu(np.ones((n, n)))  # mask[i, p] = 1 if p >= i
    sqm = np.sqrt(arm.link_masses) * mask  # (i, p)
    Ax = Dx * sqm
    Az = Dz * sqm
    MT = lambda A: ad.transpose(A, tuple(range(ad.value(A).ndim - 2)) + (ad.value(A).ndim - 1, ad.value(A).ndim - 2)) if isinstance(A, ad.Var) else np.swapaxes(A, -1, -2)
    inertia_const = np.einsum("ip,jp->ij", mask * arm.link_inertias, mask)
    M = ad.matmul(Ax, MT(Ax)) + ad.matmul(Az, MT(Az)) + inertia_const

    # gravity: h_i = g sum_{p>=i} m_p (cx_p - pivot_i)
    h = arm.gravity * ad.asum(Dx * (arm.link_masses * mask), axis=-1)

    # dM[..., i, j, k] = dM_ij / dq_k from analytic pivot/COM Jacobians
    # dDx[..., i, p]/dq_k = -Dz[k, p] * mask[k, p] + Gz[i, k]
    # dDz[..., i, p]/dq_k = +Dx[k, p] * mask[k, p] - Gx[i, k]
    strict = (np.triu(np.ones((n, n)), 1)).T  # strict[i, k] = 1 if k < i
    piv_x = jx[..., :n]
    piv_z = jz[..., :n]
    Gx = (_e(piv_x) - _r2(piv_x)) * strict  # (.., i, k): (jx_i - jx_k)[k<i]
    Gz = (_e(piv_z) - _r2(piv_z)) * strict
    dM_slices = []
    for k in range(n):
        dDx_k = _r2(-(Dz[..., k, :] * mask[k])) + _e(Gz[..., :, k])
        dDz_k = _r2(Dx[..., k, :] * mask[k]) - _e(Gx[..., :, k])
        dAx_k = dDx_k * sqm
        dAz_k = dDz_k * sqm
        dM_k = (
            ad.matmul(dAx_k, MT(Ax))
            + ad.matmul(Ax, MT(dAx_k))
            + ad.matmul(dAz_k, MT(Az))
            + ad.matmul(Az, MT(dAz_k))
        )
        dM_slices.append(dM_k)
    dM = ad.stack(dM_slices, axis=-1)  # (.., i, j, k)

    # c_i = sum_jk (dM_ij/dq_k - 0.5 dM_jk/dq_i) dq_j dq_k
    nd = ad.value(dM).ndim
    t1 = ad.asum(dM * _shape_dq(dq, nd, axis=nd - 2) * _shape_dq(dq, nd, axis=nd - 1), axis=(-1, -2))
    t2 = ad.asum(dM * _shape_dq(dq, nd, axis=nd - 3) * _shape_dq(dq, nd, axis=nd - 2), axis=(-3, -2))
    c = t1 - 0.5 * t2
    return M, c, h


def _shape_dq(dq, nd, axis):
    """Reshape dq so its joint axis lands at `axis` of an nd-dim tensor."""
    v = ad.value(dq)
    batch = v.shape[:-1]
    tail = [1] * (nd - len(batch))
    tail[axis - len(batch)] = v.shape[-1]
    return ad.reshape(dq, batch + tuple(tail)) if isinstance(dq, ad.Var) else np.reshape(dq, batch + tuple(tail))


def matvec(M, v):
    """Batched matrix-vector product over the trailing axes."""
    return ad.asum(M * _r2(v), axis=-1)


def inverse_dynamics(arm: PlanarArm, q, dq, ddq):
    """Joint torques f = M(q) ddq + c(q, dq) + h(q)."""
    _check_dim(ddq, arm.n, "ddq")
    M, c, h = dynamics_terms(arm, q, dq)
    return matvec(M, ddq) + c + h


def segment_distance(ax, az, bx, bz, cx_, cz_, dx, dz):
    """Min distance between segments [a,b] and [c,d]; batched, differentiable.

    Clamped closed-form solution of the two-parameter quadratic; parallel
    segments fall back to endpoint projection.
    """
    d1x, d1z = bx - ax, bz - az
    d2x, d2z = dx - cx_, dz - cz_
    rx, rz = ax - cx_, az - cz_
    a = d1x * d1x + d1z * d1z
    e = d2x * d2x + d2z * d2z
    f = d2x * rx + d2z * rz
    cc = d1x * rx + d1z * rz
    b = d1x * d2x + d1z * d2z
    denom = a * e - b * b
    s = ad.where(ad.value(denom) > 1e-12, ad.clip((b * f - cc * e) / ad.maximum(denom, 1e-12), 0.0, 1.0), 0.0 * a)
    t = (b * s + f) / e
    t_cl = ad.clip(t, 0.0, 1.0)
    s = ad.where(ad.value(t) < 0.0, ad.clip(-cc / a, 0.0, 1.0), s)
    s = ad.where(ad.value(t) > 1.0, ad.clip((b - cc) / a, 0.0, 1.0), s)
    px = ax + d1x * s - (cx_ + d2x * t_cl)
    pz = az + d1z * s - (cz_ + d2z * t_cl)
    return ad.sqrt(px * px + pz * pz + 1e-300)


def clearances(arm: PlanarArm, q):
    """Distances of every collision pair, shape (..., P)."""
    if not arm.collision_pairs:
        raise ValueError("arm has no collision pairs")
    jx, jz, _, _, _ = chain_points(arm, q)
    out = []
    for i, j in arm.collision_pairs:
        out.append(
            segment_distance(
                jx[..., i], jz[..., i], jx[..., i + 1], jz[..., i + 1],
                jx[..., j], jz[..., j], jx[..., j + 1], jz[..., j + 1],
            )
        )
    return ad.stack(out, axis=-1)


def min_clearance(arm: PlanarArm, q):
    """(distance, worst pair); +inf and None when no pairs are configured."""
    if not arm.collision_pairs:
        return np.inf, None
    d = ad.value(clearances(arm, q))
    if d.ndim == 1:
        k = int(np.argmin(d))
        return float(d[k]), arm.collision_pairs[k]
    k = np.argmin(d, axis=-1)
    return np.min(d, axis=-1), k
