"""Wall-clock comparison of the compiled and pure constraint kernels.

Run:  python benchmarks/bench_kernels.py [n_states]
"""
import sys
import time

import numpy as np

from kinothrow.kernels import pure
from kinothrow.robot import default_arm
from kinothrow.task import TaskConfig

try:
    from kinothrow.kernels import fast
except ImportError:
    fast = None


def bench(fn, args, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    n_states = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
    arm = default_arm()
    cfg = TaskConfig()
    rng = np.random.default_rng(0)
    qs = [s * rng.standard_normal((n_states, arm.n)) for s in (3.0, 4.0, 20.0, 200.0)]
    args = (arm, cfg, *qs)

    t_pure = bench(pure.constraint_batch, args)
    print(f"states: {n_states}")
    print(f"pure     : {1e3 * t_pure:8.2f} ms")
    if fast is None:
        print("compiled : not built")
        return
    t_fast = bench(fast.constraint_batch, args)
    diff = float(np.max(np.abs(fast.constraint_batch(*args) - pure.constraint_batch(*args))))
    print(f"compiled : {1e3 * t_fast:8.2f} ms")
    print(f"speedup  : {t_pure / t_fast:8.1f}x")
    print(f"max |diff|: {diff:.3e}")


if __name__ == "__main__":
    main()
