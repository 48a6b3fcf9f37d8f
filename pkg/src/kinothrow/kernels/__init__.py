"""Constraint-checking kernels: compiled core with a numpy fallback.

The compiled backend is used when the extension built successfully;
set KINOTHROW_PURE=1 to force the numpy path (e.g. for debugging or
benchmark baselines).
"""
import os

if os.environ.get("KINOTHROW_PURE"):
    from .pure import BACKEND, constraint_batch
else:
    try:
        from .fast import BACKEND, constraint_batch
    except ImportError:
        from .pure import BACKEND, constraint_batch

__all__ = ["BACKEND", "constraint_batch"]
