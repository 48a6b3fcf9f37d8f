"""Backend equivalence and dispatch for the constraint kernels."""
import os
import subprocess
import sys

import numpy as np
import pytest

from kinothrow import kernels
from kinothrow.kernels import pure
from kinothrow.robot import PlanarArm, Limits, default_arm
from kinothrow.task import TaskConfig, constraint_dim, constraint_values


def _random_states(rng, shape, n, scale=(3.0, 4.0, 20.0, 200.0)):
    return [scale[k] * rng.standard_normal(shape + (n,)) for k in range(4)]


@pytest.fixture(scope="module")
def compiled():
    try:
        from kinothrow.kernels import fast
    except ImportError:
        pytest.skip("compiled kernel not built")
    return fast


def test_backend_name_exposed():
    assert kernels.BACKEND in ("compiled", "pure")


def test_pure_matches_reference_implementation():
    arm = default_arm()
    cfg = TaskConfig()
    rng = np.random.default_rng(0)
    qs = _random_states(rng, (40,), arm.n)
    np.testing.assert_array_equal(
        pure.constraint_batch(arm, cfg, *qs), constraint_values(arm, *qs, cfg)
    )


def test_compiled_matches_pure_on_random_batch(compiled):
    arm = default_arm()
    cfg = TaskConfig()
    rng = np.random.default_rng(1)
    qs = _random_states(rng, (30, 17), arm.n)
    a = compiled.constraint_batch(arm, cfg, *qs)
    b = pure.constraint_batch(arm, cfg, *qs)
    assert a.shape == b.shape == (30, 17, constraint_dim(arm.n))
    np.testing.assert_allclose(a, b, rtol=0.0, atol=1e-10)


@pytest.mark.parametrize("n", [2, 4, 5])
def test_compiled_matches_pure_other_link_counts(compiled, n):
    rng = np.random.default_rng(n)
    lengths = 0.2 + rng.uniform(0.1, 0.5, n)
    masses = rng.uniform(0.5, 2.0, n)
    limits = Limits(
        q_min=-np.pi * np.ones(n),
        q_max=np.pi * np.ones(n),
        dq_max=3.0 * np.ones(n),
        ddq_max=15.0 * np.ones(n),
        dddq_max=150.0 * np.ones(n),
        tau_max=rng.uniform(10.0, 40.0, n),
        v_ee_max=4.0,
        min_clearance=0.02,
    )
    pairs = ((0, n - 1),) if n >= 3 else ()
    arm = PlanarArm(
        link_lengths=lengths,
        link_masses=masses,
        com_offsets=lengths / 2.0,
        link_inertias=masses * lengths**2 / 12.0,
        limits=limits,
        collision_pairs=pairs,
    )
    cfg = TaskConfig()
    qs = _random_states(rng, (64,), n)
    a = compiled.constraint_batch(arm, cfg, *qs)
    b = pure.constraint_batch(arm, cfg, *qs)
    np.testing.assert_allclose(a, b, rtol=0.0, atol=1e-10)
    if not pairs:
        assert np.all(np.isneginf(a[..., -1]))


def test_compiled_single_state_shape(compiled):
    arm = default_arm()
    cfg = TaskConfig()
    rng = np.random.default_rng(2)
    qs = _random_states(rng, (), arm.n)
    out = compiled.constraint_batch(arm, cfg, *qs)
    assert out.shape == (constraint_dim(arm.n),)
    np.testing.assert_allclose(out, pure.constraint_batch(arm, cfg, *qs), atol=1e-10)


def test_env_var_forces_pure_backend():
    code = "import kinothrow.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, KINOTHROW_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "pure"


def test_default_dispatch_prefers_compiled(compiled):
    env = {k: v for k, v in os.environ.items() if k != "KINOTHROW_PURE"}
    code = "import kinothrow.kernels as k; print(k.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "compiled"
