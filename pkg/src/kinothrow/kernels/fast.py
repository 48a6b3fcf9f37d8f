"""Compiled constraint-batch kernel (Cython backend)."""
from __future__ import annotations

import numpy as np

from . import _speed

BACKEND = "compiled"


def constraint_batch(arm, tcfg, q, dq, ddq, dddq) -> np.ndarray:
    """Signed constraint values for a batch of states, shape (..., 6n+2)."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    lead = q.shape[:-1]
    n = arm.n
    flat = lambda x: np.ascontiguousarray(x, dtype=np.float64).reshape(-1, n)
    pairs = np.asarray(arm.collision_pairs, dtype=np.int64).reshape(-1, 2)
    lim = arm.limits
    out = _speed.constraint_batch_c(
        flat(q),
        flat(dq),
        flat(ddq),
        flat(dddq),
        arm.link_lengths,
        arm.link_masses,
        arm.com_offsets,
        arm.link_inertias,
        arm.gravity,
        lim.q_min,
        lim.q_max,
        lim.dq_max,
        lim.ddq_max,
        lim.dddq_max,
        lim.tau_max,
        lim.v_ee_max,
        lim.min_clearance,
        pairs,
        tcfg.margin_frac,
        tcfg.clearance_margin,
    )
    return out.reshape(lead + (6 * n + 2,))
