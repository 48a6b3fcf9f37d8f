"""Pure-numpy constraint-batch kernel (fallback backend)."""
from __future__ import annotations

import numpy as np

from ..task import constraint_values

BACKEND = "pure"


def constraint_batch(arm, tcfg, q, dq, ddq, dddq) -> np.ndarray:
    """Signed constraint values for a batch of states, shape (..., 6n+2)."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    dq = np.ascontiguousarray(dq, dtype=np.float64)
    ddq = np.ascontiguousarray(ddq, dtype=np.float64)
    dddq = np.ascontiguousarray(dddq, dtype=np.float64)
    return constraint_values(arm, q, dq, ddq, dddq, tcfg)
