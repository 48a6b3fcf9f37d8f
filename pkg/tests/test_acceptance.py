"""Acceptance gate: one test per criterion, run at desk scale.

The heavy fixtures (collection, manifold training, flow, fine-tuning)
are session-scoped and shared by criteria 5-9; the whole gate is sized
to finish well inside the per-criterion CPU budgets.
"""
import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from kinothrow import autodiff as ad
from kinothrow import cli, datagen, latentflow as lf, planner, tmo
from kinothrow.curves import BasisSet, TransitionCurve, ViaPointCurve
from kinothrow.datagen import CollectConfig, Dataset, collect, optimize_motion
from kinothrow.manifold import (
    DmmConfig,
    decode,
    encode,
    release_weighted_rmse,
    train_dmm,
)
from kinothrow.robot import PlanarArm, Limits, default_arm, dynamics_terms, inverse_dynamics, matvec
from kinothrow.task import TaskConfig, TaskParam, TaskSpace, constraint_values, flight_time
from kinothrow.tmo import TmoConfig, task_loss_sample

SEED = 1

# Pipeline scale shared by criteria 5-9 (calibrated to the CPU budgets).
SPACE = TaskSpace.with_grid(0.7, 1.2, 0.0, 0.2, 6, 3)
CCFG = CollectConfig(attempts=12, max_iters=3000, seed=SEED)
DMM_CFG = DmmConfig(
    m=16,
    N_b=40,
    L=100,
    enc_hidden=(256, 256),
    psi_hidden=(256, 256),
    theta_hidden=(256, 256),
    eta_hidden=(128, 128),
    epochs=1600,
    batch_size=32,
    lr=5e-4,
)
FLOW_CFG = lf.FlowConfig(hidden=(256, 256, 256), epochs=40_000, batch_size=64)
TMO_CFG = TmoConfig(w_recon=5.0, steps=600, n_tau=8, n_z=8, n_t=32, lr=3e-4)
# Fine-tuning pushes against larger safety margins than the checker uses,
# so near-boundary samples generate a real penalty gradient; the clearance
# floor in particular is widened and up-weighted because violations there
# live in a thin tail the Monte-Carlo penalty would otherwise never see.
TMO_MARGIN = 0.05
TMO_CLEARANCE_MARGIN = 0.25
TMO_CLEARANCE_WEIGHT = 200.0
K_EVAL = 100


def _report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"criterion {num:2d} [{'PASS' if ok else 'FAIL'}] {name}  {detail}")
    assert ok, f"criterion {num}: {name}  {detail}"


# ------------------------------------------------------------- fixtures

@pytest.fixture(scope="session")
def arm():
    return default_arm()


@pytest.fixture(scope="session")
def tcfg():
    return TaskConfig()


@pytest.fixture(scope="session")
def dataset(arm, tcfg):
    ds, report = collect(arm, SPACE, CCFG, tcfg)
    return ds, report


@pytest.fixture(scope="session")
def split(dataset):
    ds, _ = dataset
    rng = np.random.default_rng(0)
    idx = rng.permutation(len(ds.entries))
    n_hold = max(1, len(ds.entries) // 6)
    train = Dataset(tuple(ds.entries[i] for i in idx[n_hold:]), ds.T, ds.L, {})
    held = [ds.entries[i] for i in idx[:n_hold]]
    return train, held


@pytest.fixture(scope="session")
def dmm(split):
    train, _ = split
    enc, dec, curve = train_dmm(train, DMM_CFG, seed=5)
    return enc, dec


@pytest.fixture(scope="session")
def flow(dmm, split):
    enc, _ = dmm
    train, _ = split
    zs = encode(enc, train.trajectories(), train.release_times())
    field = lf.build_field(
        DMM_CFG.m, (SPACE.r_lo, SPACE.r_hi, SPACE.h_lo, SPACE.h_hi), FLOW_CFG, np.random.default_rng(7)
    )
    field, _ = lf.train_flow(field, train.tasks(), zs, FLOW_CFG, seed=7)
    return field


@pytest.fixture(scope="session")
def tuned(dmm, flow, split, arm, tcfg):
    enc, dec = dmm
    train, _ = split
    from kinothrow.task import constraint_dim, constraint_layout

    lay = constraint_layout(arm.n)
    W = np.ones(constraint_dim(arm.n))
    W[lay["torque"]] = 0.1
    W[lay["clearance"]] = TMO_CLEARANCE_WEIGHT
    tcfg_ft = replace(
        tcfg, margin_frac=TMO_MARGIN, clearance_margin=TMO_CLEARANCE_MARGIN, W=W
    )
    dec_post, _ = tmo.finetune(
        enc, dec, flow, train, arm, SPACE, tcfg_ft, TMO_CFG, FLOW_CFG, DMM_CFG, seed=11
    )
    return dec_post


def _eval(dec, flow, arm, tcfg, grids, seed=0):
    return planner.evaluate(dec, flow, arm, tcfg, grids, K_EVAL, FLOW_CFG, seed=seed)


@pytest.fixture(scope="session")
def eval_grids():
    unseen = TaskSpace.with_grid(0.75, 1.15, 1.0 / 30, 0.2 - 1.0 / 30, 5, 2).seen_grid
    return {"seen": list(SPACE.seen_grid), "unseen": list(unseen)}


@pytest.fixture(scope="session")
def rows_pre(dmm, flow, arm, tcfg, eval_grids):
    _, dec = dmm
    return _eval(dec, flow, arm, tcfg, eval_grids)


@pytest.fixture(scope="session")
def rows_post(tuned, flow, arm, tcfg, eval_grids):
    return _eval(tuned, flow, arm, tcfg, eval_grids)


# ------------------------------------------------------------- criteria

def test_criterion_01_curve_exactness():
    rng = np.random.default_rng(0)
    basis = BasisSet(20)
    worst_bc, worst_fd = 0.0, 0.0
    t0 = time.time()
    for _ in range(100):
        n = int(rng.integers(2, 6))
        T = float(rng.uniform(0.5, 4.0))
        q0, qT = rng.standard_normal(n), rng.standard_normal(n)
        dq0, dqT = rng.standard_normal(n), rng.standard_normal(n)
        w = rng.standard_normal((20, n))
        via = ViaPointCurve(q0, qT, w, T, basis)
        tr = TransitionCurve(q0, dq0, qT, dqT, w, T, basis)
        worst_bc = max(
            worst_bc,
            float(np.max(np.abs(np.asarray(via.eval(0.0)) - q0))),
            float(np.max(np.abs(np.asarray(via.eval(T)) - qT))),
            float(np.max(np.abs(np.asarray(via.eval(0.0, 1))))),
            float(np.max(np.abs(np.asarray(via.eval(T, 1))))),
            float(np.max(np.abs(np.asarray(tr.eval(0.0)) - q0))),
            float(np.max(np.abs(np.asarray(tr.eval(T)) - qT))),
            float(np.max(np.abs(np.asarray(tr.eval(0.0, 1)) - dq0))),
            float(np.max(np.abs(np.asarray(tr.eval(T, 1)) - dqT))),
        )
        ts = rng.uniform(0.05 * T, 0.95 * T, 5)
        h = 1e-6 * T
        for curve in (via, tr):
            for order in (1, 2, 3):
                lo = np.asarray(curve.eval(ts - h, order - 1))
                hi = np.asarray(curve.eval(ts + h, order - 1))
                fd = (hi - lo) / (2 * h)
                an = np.asarray(curve.eval(ts, order))
                rel = np.max(np.abs(fd - an) / (np.abs(an) + 1.0))
                worst_fd = max(worst_fd, float(rel))
    elapsed = time.time() - t0
    _report(
        1,
        "curve exactness",
        worst_bc <= 1e-12 and worst_fd <= 1e-5 and elapsed < 5.0,
        f"bc={worst_bc:.2e} fd={worst_fd:.2e} t={elapsed:.1f}s",
    )


def test_criterion_02_dynamics_soundness(arm):
    t0 = time.time()
    rng = np.random.default_rng(0)
    # mass-matrix symmetry and forward/inverse roundtrip
    worst_sym, worst_rt = 0.0, 0.0
    for _ in range(50):
        q, dq = rng.standard_normal(arm.n), rng.standard_normal(arm.n)
        ddq = rng.standard_normal(arm.n)
        M, c, h = dynamics_terms(arm, q, dq)
        M = np.asarray(M)
        worst_sym = max(worst_sym, float(np.max(np.abs(M - M.T))))
        tau = np.asarray(inverse_dynamics(arm, q, dq, ddq))
        ddq_back = np.linalg.solve(M, tau - np.asarray(c) - np.asarray(h))
        worst_rt = max(worst_rt, float(np.max(np.abs(ddq_back - ddq))))
    # zero-torque zero-gravity energy conservation over 1 s of RK4
    arm0 = PlanarArm(
        link_lengths=arm.link_lengths,
        link_masses=arm.link_masses,
        com_offsets=arm.com_offsets,
        link_inertias=arm.link_inertias,
        limits=arm.limits,
        gravity=0.0,
        p_b=arm.p_b,
        collision_pairs=arm.collision_pairs,
    )

    def accel(q, dq):
        M, c, h = dynamics_terms(arm0, q, dq)
        return np.linalg.solve(np.asarray(M), -(np.asarray(c) + np.asarray(h)))

    def energy(q, dq):
        M, _, _ = dynamics_terms(arm0, q, dq)
        return 0.5 * dq @ np.asarray(M) @ dq

    q = np.array([0.3, -0.4, 0.2])
    dq = np.array([0.5, -0.3, 0.8])
    e0 = energy(q, dq)
    dt = 1e-3
    for _ in range(1000):
        k1q, k1v = dq, accel(q, dq)
        k2q, k2v = dq + 0.5 * dt * k1v, accel(q + 0.5 * dt * k1q, dq + 0.5 * dt * k1v)
        k3q, k3v = dq + 0.5 * dt * k2v, accel(q + 0.5 * dt * k2q, dq + 0.5 * dt * k2v)
        k4q, k4v = dq + dt * k3v, accel(q + dt * k3q, dq + dt * k3v)
        q = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        dq = dq + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    drift = abs(energy(q, dq) - e0) / abs(e0)
    # single pendulum: tau = m g r cos(q) at rest
    m_p, r_p, l_p = 1.3, 0.21, 0.5
    pend = PlanarArm(
        link_lengths=np.array([l_p, l_p]),
        link_masses=np.array([m_p, 1e-12]),
        com_offsets=np.array([r_p, 0.0]),
        link_inertias=np.array([1e-12, 1e-12]),
        limits=Limits(
            q_min=-np.ones(2) * 10, q_max=np.ones(2) * 10, dq_max=np.ones(2) * 10,
            ddq_max=np.ones(2) * 100, dddq_max=np.ones(2) * 1000, tau_max=np.ones(2) * 100,
            v_ee_max=100.0, min_clearance=1e-9,
        ),
    )
    worst_pend = 0.0
    for qv in rng.uniform(-3, 3, 20):
        tau = np.asarray(inverse_dynamics(pend, np.array([qv, 0.0]), np.zeros(2), np.zeros(2)))
        worst_pend = max(worst_pend, abs(tau[0] - m_p * 9.81 * r_p * np.cos(qv)))
    elapsed = time.time() - t0
    _report(
        2,
        "dynamics soundness",
        worst_sym <= 1e-12 and worst_rt <= 1e-9 and drift <= 1e-6 and worst_pend <= 1e-10 and elapsed < 30,
        f"sym={worst_sym:.1e} rt={worst_rt:.1e} drift={drift:.1e} pend={worst_pend:.1e} t={elapsed:.0f}s",
    )


def _fd_check(loss_fn, params, rel_tol, n_dirs, rng, h=1e-6):
    """Directional finite differences against the reverse-mode gradient."""
    _, grads = ad.grad(loss_fn, params)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(p.shape) for p in params]
        hi = float(ad.value(loss_fn([p + h * d for p, d in zip(params, dirs)])))
        lo = float(ad.value(loss_fn([p - h * d for p, d in zip(params, dirs)])))
        fd = (hi - lo) / (2 * h)
        an = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
        worst = max(worst, abs(fd - an) / (abs(an) + abs(fd) + 1e-8))
    return worst


def test_criterion_03_gradient_contract(arm, tcfg):
    t0 = time.time()
    rng = np.random.default_rng(0)
    basis = BasisSet(8)
    grid = np.linspace(0.0, 3.0, 25)
    ccfg = CollectConfig(T=3.0, L=25, basis_count=8)
    W = tcfg.weights_for(arm.n)
    loss, _ = datagen._batch_loss_fn(arm, TaskParam(0.9, 0.1), tcfg, ccfg, basis, grid, W)
    worsts = {}
    # collection objective (task error + penalty + regularizers)
    w_coll = 0.0
    for _ in range(7):
        params = [
            0.3 * rng.standard_normal((2, arm.n)),
            0.3 * rng.standard_normal((2, arm.n)),
            0.1 * rng.standard_normal((2, 8, arm.n)),
            0.2 * rng.standard_normal(2),
        ]
        w_coll = max(w_coll, _fd_check(loss, params, 1e-4, 1, rng))
    worsts["collection"] = w_coll
    # manifold reconstruction loss
    from kinothrow.manifold import build_models, recon_loss

    cfg = DmmConfig(m=4, N_b=10, L=12, T=3.0, enc_hidden=(16,), psi_hidden=(16,),
                    theta_hidden=(16,), eta_hidden=(8,), epochs=1)
    enc, dec = build_models(cfg, arm.n, rng)
    trajs = 0.3 * rng.standard_normal((3, cfg.L, arm.n))
    etas = rng.uniform(0.5, 2.5, 3)
    fn = lambda ps: recon_loss(enc, dec, trajs, etas, cfg, params=tuple(ps))
    w_recon = 0.0
    for _ in range(7):
        params = [
            enc.params + 0.01 * rng.standard_normal(enc.params.shape),
            dec.psi_params + 0.01 * rng.standard_normal(dec.psi_params.shape),
            dec.theta_params + 0.01 * rng.standard_normal(dec.theta_params.shape),
            dec.eta_params + 0.01 * rng.standard_normal(dec.eta_params.shape),
        ]
        w_recon = max(w_recon, _fd_check(fn, params, 1e-4, 1, rng))
    worsts["reconstruction"] = w_recon
    # flow-matching loss
    fcfg = lf.FlowConfig(hidden=(16,), epochs=1)
    field = lf.build_field(4, (0.7, 1.2, 0.0, 0.2), fcfg, rng)
    taus = np.stack([rng.uniform(0.7, 1.2, 4), rng.uniform(0.0, 0.2, 4)], axis=-1)
    z1 = rng.standard_normal((4, 4))
    w_cfm = 0.0
    for i in range(7):
        fn = lambda ps: lf.cfm_loss(field, taus, z1, np.random.default_rng(i), params=ps[0])
        p0 = field.params + 0.02 * rng.standard_normal(field.params.shape)
        w_cfm = max(w_cfm, _fd_check(fn, [p0], 1e-4, 1, rng))
    worsts["flow"] = w_cfm
    # fine-tuning composite
    tcfg_small = TmoConfig(n_tau=1, n_z=1, n_t=2, steps=1)
    fn = lambda ps: task_loss_sample(
        dec, field, arm, SPACE, TaskConfig(), tcfg_small, fcfg, seed=3, params=tuple(ps)
    )[0]
    w_tmo = 0.0
    for _ in range(5):
        params = [
            dec.psi_params + 0.01 * rng.standard_normal(dec.psi_params.shape),
            dec.theta_params + 0.01 * rng.standard_normal(dec.theta_params.shape),
            dec.eta_params + 0.01 * rng.standard_normal(dec.eta_params.shape),
        ]
        w_tmo = max(w_tmo, _fd_check(fn, params, 1e-3, 1, rng, h=1e-6))
    worsts["fine-tuning"] = w_tmo
    elapsed = time.time() - t0
    ok = (
        worsts["collection"] <= 1e-4
        and worsts["reconstruction"] <= 1e-4
        and worsts["flow"] <= 1e-4
        and worsts["fine-tuning"] <= 1e-3
        and elapsed < 120
    )
    _report(3, "gradient contract", ok, " ".join(f"{k}={v:.1e}" for k, v in worsts.items()) + f" t={elapsed:.0f}s")


def test_criterion_04_flight_time_and_constants(tcfg):
    t0 = time.time()
    rng = np.random.default_rng(0)
    N = 10_000
    p = np.stack([rng.uniform(-1.5, 1.5, N), rng.uniform(0.5, 2.5, N)], axis=-1)
    v = np.stack([rng.uniform(-5, 5, N), rng.uniform(-3, 6, N)], axis=-1)
    h = 0.1
    dt, reachable = flight_time(p, v, h, tcfg)
    res = p[:, 1] + v[:, 1] * dt - 0.5 * tcfg.g * dt**2 - h
    worst = float(np.max(np.abs(res[reachable])))
    elapsed = time.time() - t0
    consts = tcfg.g == 9.81 and tcfg.margin_frac == 0.01 and tcfg.success_threshold == 0.04
    _report(
        4,
        "flight-time root + constants",
        worst <= 1e-9 and consts and bool(np.any(reachable)) and elapsed < 5,
        f"residual={worst:.1e} feasible={int(reachable.sum())}/{N} t={elapsed:.1f}s",
    )


def test_criterion_05_collection_yield(dataset, arm, tcfg):
    ds, report = dataset
    # yield per r value, aggregated over h
    rs = sorted({row["r"] for row in report})
    yields = []
    for r in rs:
        rows = [row for row in report if row["r"] == r]
        yields.append(sum(row["kept"] for row in rows) / sum(row["attempts"] for row in rows))
    easiest = [row for row in report if row["r"] == rs[0] and row["h"] == 0.0][0]
    corner_ok = easiest["kept"] / easiest["attempts"] >= 0.6
    # weak decrease: non-positive fitted slope of yield versus r, allowing
    # one attempt of sampling noise spread across the whole range
    slack = 1.0 / (CCFG.attempts * sum(1 for row in report if row["r"] == rs[0]))
    slope = float(np.polyfit(np.arange(len(yields)), np.asarray(yields), 1)[0])
    trend_ok = slope <= slack / (len(yields) - 1)
    # every stored entry passes the full constraint check
    grid = np.linspace(0.0, ds.T, ds.L)
    all_feasible = True
    for e in ds.entries:
        qs = [np.asarray(e.motion.eval(grid, k)) for k in range(4)]
        C = constraint_values(arm, *qs, tcfg)
        all_feasible &= bool(np.all(C <= 0.0))
    _report(
        5,
        "collection yield",
        corner_ok and trend_ok and all_feasible and len(ds.entries) > 0,
        f"corner={easiest['kept']}/{easiest['attempts']} yields_by_r={[round(y, 2) for y in yields]} "
        f"slope={slope:.4f} checked={len(ds.entries)}",
    )


def test_criterion_06_manifold_quality(dmm, split):
    enc, dec = dmm
    _, held = split
    grid = np.linspace(0.0, DMM_CFG.T, DMM_CFG.L)
    trajs = np.stack([e.traj for e in held])
    etas = np.array([e.eta for e in held])
    z = encode(enc, trajs, etas)
    (q_hat,), eta_hat = decode(dec, z, grid)
    rmses = [
        release_weighted_rmse(q_hat[i], trajs[i], grid, etas[i], DMM_CFG.weight_sharpness)
        for i in range(len(held))
    ]
    eta_err = np.abs(np.asarray(eta_hat) - etas)
    frac_eta = float(np.mean(eta_err <= 0.1))
    pooled = float(np.sqrt(np.mean(np.square(rmses))))
    _report(
        6,
        "manifold quality",
        pooled <= 0.05 and frac_eta >= 0.9,
        f"held-out={len(held)} weighted-RMSE={pooled:.4f} |eta err|<=0.1s on {100 * frac_eta:.0f}%",
    )


def test_criterion_07_trend_reproduction(rows_pre, rows_post):
    pre = {r["set"]: r for r in rows_pre}
    post = {r["set"]: r for r in rows_post}
    cats = list(planner.CATEGORY_LABELS)
    # (a) fine-tuning improves SR and every constraint category on the seen grid
    sr_ok = post["seen"]["SR"] > pre["seen"]["SR"]
    cat_ok = all(
        post["seen"][c] > pre["seen"][c] or (pre["seen"][c] == 100.0 and post["seen"][c] == 100.0)
        for c in cats
    )
    # (b) rejection sampling: 100% success among retained, retention >= 50%
    rs_ok = post["seen"]["RS_SR"] == 100.0 or post["seen"]["retention"] == 0.0
    retention_ok = post["seen"]["retention"] >= 50.0
    # (c) unseen SR within 15 points of seen SR after fine-tuning
    gap = abs(post["seen"]["SR"] - post["unseen"]["SR"])
    _report(
        7,
        "trend reproduction",
        sr_ok and cat_ok and rs_ok and retention_ok and gap <= 15.0,
        f"SR {pre['seen']['SR']:.1f}->{post['seen']['SR']:.1f} unseen={post['unseen']['SR']:.1f} "
        f"retention={post['seen']['retention']:.1f}% RS_SR={post['seen']['RS_SR']:.1f}%",
    )


def test_criterion_08_speed_separation(tuned, flow, arm, tcfg):
    tau = TaskParam(1.05, 0.15)
    # 5-run medians on both sides: generation/checking of 100 candidates
    # versus one from-scratch optimization of a single motion
    gen_times, check_times, opt_times = [], [], []
    for i in range(5):
        t0 = time.perf_counter()
        motions = planner.generate(tuned, flow, tau, 100, FLOW_CFG, seed=(2, i))
        gen_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        planner.check_batch(tuned, motions, arm, tcfg, tau)
        check_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        datagen.optimize_motion(arm, tau, CCFG, tcfg, seed=(SEED, 0, i))
        opt_times.append(time.perf_counter() - t0)
    gen_med = float(np.median(gen_times))
    check_med = float(np.median(check_times))
    opt_time = float(np.median(opt_times))
    ratio = opt_time / gen_med
    _report(
        8,
        "speed separation",
        ratio >= 50.0 and check_med < 2.0,
        f"generate100={gen_med * 1e3:.1f}ms optimize1={opt_time:.2f}s ratio={ratio:.0f}x check100={check_med:.2f}s",
    )


def test_criterion_09_adaptation(tuned, flow, arm, tcfg):
    # mid-motion target jump while executing a previously planned throw
    motions = planner.generate(tuned, flow, TaskParam(0.8, 0.05), 50, FLOW_CFG, seed=21)
    reports = planner.check_batch(tuned, motions, arm, tcfg, TaskParam(0.8, 0.05))
    executing = next(m for m, r in zip(motions, reports) if r.feasible)
    t_now = 0.6
    state = (np.asarray(executing.eval(t_now)), np.asarray(executing.eval(t_now, 1)), t_now)
    tau_new = TaskParam(1.05, 0.15)
    t0 = time.perf_counter()
    plan, status = planner.adapt(state, tau_new, tuned, flow, arm, tcfg, FLOW_CFG, seed=22)
    wall = time.perf_counter() - t0
    ok = status == "success" and wall < 1.0
    detail = f"status={status} wall={wall:.3f}s"
    if plan is not None:
        tr = plan.transition
        res = max(
            float(np.max(np.abs(np.asarray(tr.eval(0.0)) - state[0]))),
            float(np.max(np.abs(np.asarray(tr.eval(0.0, 1)) - state[1]))),
        )
        target_q = np.asarray(plan.motion.eval(plan.attach_time))
        target_dq = np.asarray(plan.motion.eval(plan.attach_time, 1))
        res = max(
            res,
            float(np.max(np.abs(np.asarray(tr.eval(tr.T)) - target_q))),
            float(np.max(np.abs(np.asarray(tr.eval(tr.T, 1)) - target_dq))),
        )
        final = planner.check(plan.motion, arm, tcfg, tau=tau_new)
        ok = ok and res <= 1e-9 and final.success and final.feasible
        detail += f" boundary={res:.1e} final_success={final.success}"
    _report(9, "online adaptation", ok, detail)


def test_criterion_10_determinism(tmp_path):
    cfg_doc = {
        "seed": 3,
        "task_space": {"r": [0.7, 1.2], "h": [0.0, 0.2], "seen_grid": [2, 1]},
        "collect": {"attempts": 3, "max_iters": 400, "L": 40},
        "dmm": {
            "m": 4, "N_b": 12, "L": 40, "enc_hidden": [32], "psi_hidden": [32],
            "theta_hidden": [32], "eta_hidden": [16], "epochs": 15, "batch_size": 4,
        },
        "flow": {"hidden": [32], "epochs": 20, "batch_size": 4},
        "tmo": {"steps": 3, "n_tau": 2, "n_z": 2, "n_t": 4},
        "evaluation": {"unseen_grid": [2, 1], "candidates": 8},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg_doc))
    outs = [str(tmp_path / "run_a"), str(tmp_path / "run_b")]
    for out in outs:
        for cmd in ("collect", "train-dmm", "train-flow", "finetune", "evaluate"):
            assert cli.main([cmd, "--config", str(cfg_path), "--out", out]) == 0
    def canonical(path):
        """Artifact bytes with wall-clock timing columns masked out of CSVs."""
        raw = open(path, "rb").read()
        if not path.endswith(".csv"):
            return raw
        lines = raw.decode().splitlines()
        header = lines[1].split(",")
        keep = [i for i, c in enumerate(header) if "seconds" not in c]
        rows = [",".join(line.split(",")[i] for i in keep) for line in lines[1:]]
        return "\n".join([lines[0], *rows]).encode()

    mismatches = []
    names = sorted(os.listdir(outs[0]))
    for name in names:
        a = canonical(os.path.join(outs[0], name))
        b = canonical(os.path.join(outs[1], name))
        if a != b:
            mismatches.append(name)
    _report(10, "pipeline determinism", not mismatches, f"artifacts={len(names)} mismatched={mismatches}")
