"""Parametric joint-space curves with analytic time derivatives to order 3.

Two families:

* via-point curves: exact boundary positions, zero boundary velocities;
  used for throwing-motion optimization.
* transition curves: exact boundary positions *and* velocities; used to
  splice a running motion onto a newly planned one.

Both are a boundary polynomial plus a Gaussian-basis residual gated by
the envelope s^2(s-1)^2, so boundary conditions hold for any coefficient
matrix w.  All evaluation code runs on plain ndarrays or autodiff Vars.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

_BINOM = {0: (1,), 1: (1, 1), 2: (1, 2, 1), 3: (1, 3, 3, 1)}


@dataclass(frozen=True)
class BasisSet:
    """Gaussian bump basis phi_i(s) = exp(-B^2 (s - (i-1)/(B-1))^2) on [0,1]."""

    count: int = 20

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("basis count must be >= 2")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.count)


def basis_row(basis: BasisSet, s, order: int = 0):
    """Row of basis values (or s-derivatives) at s; shape (..., B).

    s may be a scalar, an array, or an autodiff Var in [0, 1].
    """
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0..3")
    sv = ad.value(s)
    if np.any(sv < -1e-12) or np.any(sv > 1.0 + 1e-12):
        raise ValueError("s outside [0, 1]")
    b2 = float(basis.count) ** 2
    if isinstance(s, ad.Var):
        u = ad.reshape(s, sv.shape + (1,)) - basis.centers
    else:
        u = np.asarray(sv)[..., None] - basis.centers
    phi = ad.exp(-b2 * u * u)
    if order == 0:
        return phi
    if order == 1:
        return -2.0 * b2 * u * phi
    if order == 2:
        return (4.0 * b2 * b2 * (u * u) - 2.0 * b2) * phi
    return (12.0 * b2 * b2 * u - 8.0 * b2 * b2 * b2 * u**3) * phi


def _smoothstep(s, order):
    # p(s) = (3 - 2s) s^2 and its s-derivatives
    if order == 0:
        return (3.0 - 2.0 * s) * s * s
    if order == 1:
        return 6.0 * s - 6.0 * s * s
    if order == 2:
        return 6.0 - 12.0 * s
    return -12.0 + 0.0 * s


def _envelope(s, order):
    # r(s) = s^2 (s-1)^2 = s^4 - 2 s^3 + s^2 and its s-derivatives
    if order == 0:
        return s * s * (s - 1.0) * (s - 1.0)
    if order == 1:
        return 4.0 * s**3 - 6.0 * s * s + 2.0 * s
    if order == 2:
        return 12.0 * s * s - 12.0 * s + 2.0
    return 24.0 * s - 12.0


def _velocity_poly(s_e, dq0, dqT, order):
    # v(s) = dq0 s - (2 dq0 + dqT) s^2 + (dq0 + dqT) s^3, derivatives in s.
    # s_e carries a trailing joint axis; dq0/dqT broadcast against the result.
    a = dq0
    b = -(2.0 * dq0 + dqT)
    c = dq0 + dqT
    if order == 0:
        return a * s_e + b * (s_e * s_e) + c * s_e**3
    if order == 1:
        return a + 2.0 * b * s_e + 3.0 * c * (s_e * s_e)
    if order == 2:
        return 2.0 * b + 6.0 * c * s_e
    return 6.0 * c + 0.0 * s_e


def _expand_last(x):
    """Append a length-1 trailing axis (joint or basis axis)."""
    if isinstance(x, ad.Var):
        return ad.reshape(x, ad.value(x).shape + (1,))
    return np.asarray(x, dtype=np.float64)[..., None]


def _apply_basis(row, w, per_item):
    """Contract a basis row (..., B) with coefficients w (..., B, n)."""
    if per_item:
        # one scalar time per batch item: row (..., B), w (..., B, n)
        return ad.asum(_expand_last(row) * w, axis=-2)
    return ad.matmul(row, w)


def via_eval(q0, qT, w, T, basis: BasisSet, t, order: int = 0, per_item: bool = False):
    """Evaluate a via-point curve (or its time derivative) at time(s) t.

    Shape contract: w is (..., B, n); t is either a time grid (its shape
    plus a trailing joint axis must broadcast against the (..., L, n)
    result -- pass batched boundaries as (..., 1, n)) or one scalar time
    per batch item.  q0/qT must broadcast against the result.
    """
    k = order
    s = t / float(T)
    row = None
    for j, coeff in enumerate(_BINOM[k]):
        term = _expand_last(_envelope(s, j)) * basis_row(basis, s, k - j)
        if coeff != 1:
            term = float(coeff) * term
        row = term if row is None else row + term
    gate = _apply_basis(row, w, per_item)
    out = _expand_last(_smoothstep(s, k)) * (qT - q0) + gate
    if k == 0:
        out = q0 + out
    else:
        out = out / float(T) ** k
    return out


def transition_eval(q0, dq0, qT, dqT, w, T, basis: BasisSet, t, order: int = 0, per_item: bool = False):
    """Evaluate a transition curve (or derivative) at time(s) t.

    Same shape contract as :func:`via_eval`.  The velocity polynomial is
    pre-scaled by T so boundary velocities are exact for any duration,
    not only T = 1.
    """
    k = order
    s = t / float(T)
    base = via_eval(q0, qT, w, T, basis, t, order, per_item=per_item)
    vel = _velocity_poly(_expand_last(s), dq0, dqT, k) * (float(T) ** (1 - k))
    return base + vel


@dataclass(frozen=True)
class ViaPointCurve:
    """q(t) = q0 + (qT - q0) p(s) + s^2(s-1)^2 Phi(s) w, s = t/T."""

    q0: np.ndarray
    qT: np.ndarray
    w: np.ndarray
    T: float
    basis: BasisSet = field(default_factory=BasisSet)

    def __post_init__(self):
        q0 = np.asarray(self.q0, dtype=np.float64)
        qT = np.asarray(self.qT, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if q0.shape != qT.shape or w.shape != (self.basis.count, q0.shape[-1]):
            raise ValueError("inconsistent curve parameter shapes")
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "qT", qT)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.q0.shape[-1]

    def eval(self, t, order: int = 0):
        _check_time(t, self.T)
        return via_eval(self.q0, self.qT, self.w, self.T, self.basis, t, order)


@dataclass(frozen=True)
class TransitionCurve:
    """Boundary-velocity-matching curve between two phases."""

    q0: np.ndarray
    dq0: np.ndarray
    qT: np.ndarray
    dqT: np.ndarray
    w: np.ndarray
    T: float
    basis: BasisSet = field(default_factory=BasisSet)

    def __post_init__(self):
        for name in ("q0", "dq0", "qT", "dqT"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.shape != (self.basis.count, self.q0.shape[-1]):
            raise ValueError("inconsistent curve parameter shapes")

    @property
    def n(self) -> int:
        return self.q0.shape[-1]

    def eval(self, t, order: int = 0):
        _check_time(t, self.T)
        return transition_eval(self.q0, self.dq0, self.qT, self.dqT, self.w, self.T, self.basis, t, order)


def _check_time(t, T):
    tv = ad.value(t)
    if np.any(tv < -1e-9) or np.any(tv > T + 1e-9):
        raise ValueError(f"time outside [0, {T}]")
