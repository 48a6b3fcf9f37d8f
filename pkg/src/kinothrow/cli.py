"""Command-line pipeline orchestrator.

Subcommands run the stages in order — collect, train-dmm, train-flow,
finetune, evaluate — plus plan/adapt for online use and selftest for a
quick property check.  Every stage reads the shared config file, writes
its artifacts into the output directory, and later stages resume from
those files.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import datagen, latentflow as lf, planner, tmo
from .config import ConfigError, ToolkitConfig, config_hash, load_config, parse_config, unseen_tasks
from .manifold import build_models, encode, train_dmm
from .storage import (
    Checkpoint,
    StorageError,
    atomic_write_text,
    file_hash,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    write_csv,
)
from .task import TaskParam

DATASET = "dataset.json"
REPORT = "collection_report.csv"
CK_DMM = "dmm.json"
CK_PRE = "model_pre_tmo.json"
CK_POST = "model_post_tmo.json"
DMM_BLOCKS = ("encoder", "psi", "theta", "eta")


class StageError(RuntimeError):
    """A prerequisite artifact is missing; message names the stage to run."""


def _require(path, stage: str):
    if not os.path.exists(path):
        raise StageError(f"missing artifact {os.path.basename(path)}; run `{stage}` first")
    return path


def _ctx(args):
    cfg = load_config(args.config) if args.config else parse_config({})
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = args.out or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return cfg, out, config_hash(cfg)


def _dmm_models(cfg: ToolkitConfig, blocks):
    enc, dec = build_models(cfg.dmm, cfg.arm.n, np.random.default_rng(0))
    enc = dataclasses.replace(enc, params=blocks["encoder"])
    dec = dataclasses.replace(
        dec, psi_params=blocks["psi"], theta_params=blocks["theta"], eta_params=blocks["eta"]
    )
    return enc, dec


def _flow_model(cfg: ToolkitConfig, params):
    s = cfg.space
    field = lf.build_field(cfg.dmm.m, (s.r_lo, s.r_hi, s.h_lo, s.h_hi), cfg.flow, np.random.default_rng(0))
    return dataclasses.replace(field, params=params)


def _load_models(cfg: ToolkitConfig, out: str, use_tmo: bool, h: str):
    """Models for evaluation/planning; prefers the fine-tuned checkpoint."""
    _require(os.path.join(out, CK_DMM), "train-dmm")
    which = CK_POST if use_tmo and os.path.exists(os.path.join(out, CK_POST)) else CK_PRE
    ck = load_checkpoint(_require(os.path.join(out, which), "train-flow"), expect_config_hash=h)
    enc, dec = _dmm_models(cfg, ck.blocks)
    field = _flow_model(cfg, ck.blocks["field"])
    return enc, dec, field, ck.stage


def cmd_collect(args):
    cfg, out, h = _ctx(args)
    ccfg = dataclasses.replace(cfg.collect, seed=cfg.seed)
    ds, report = datagen.collect(cfg.arm, cfg.space, ccfg, cfg.task)
    ds.metadata["config_hash"] = h
    save_dataset(ds, os.path.join(out, DATASET))
    write_csv(
        os.path.join(out, REPORT),
        ("r", "h", "attempts", "optimized", "kept", "seconds"),
        report,
        h,
    )
    print(f"collected {len(ds.entries)} motions -> {os.path.join(out, DATASET)}")
    return 0


def cmd_train_dmm(args):
    cfg, out, h = _ctx(args)
    ds = load_dataset(_require(os.path.join(out, DATASET), "collect"))
    enc, dec, curve = train_dmm(ds, cfg.dmm, seed=cfg.seed)
    blocks = {
        "encoder": enc.params,
        "psi": dec.psi_params,
        "theta": dec.theta_params,
        "eta": dec.eta_params,
    }
    ds_hash = file_hash(os.path.join(out, DATASET))
    save_checkpoint(Checkpoint(blocks, "dmm", h, ds_hash), os.path.join(out, CK_DMM))
    write_csv(
        os.path.join(out, "dmm_loss.csv"),
        ("epoch", "loss"),
        [{"epoch": i, "loss": float(v)} for i, v in enumerate(curve)],
        h,
    )
    print(f"trained manifold on {len(ds.entries)} motions -> {os.path.join(out, CK_DMM)}")
    return 0


def cmd_train_flow(args):
    cfg, out, h = _ctx(args)
    ds = load_dataset(_require(os.path.join(out, DATASET), "collect"))
    ck = load_checkpoint(_require(os.path.join(out, CK_DMM), "train-dmm"), expect_config_hash=h)
    enc, dec = _dmm_models(cfg, ck.blocks)
    zs = encode(enc, ds.trajectories(), ds.release_times())
    s = cfg.space
    field = lf.build_field(
        cfg.dmm.m, (s.r_lo, s.r_hi, s.h_lo, s.h_hi), cfg.flow, np.random.default_rng(cfg.seed)
    )
    field, curve = lf.train_flow(field, ds.tasks(), zs, cfg.flow, seed=cfg.seed)
    blocks = {name: ck.blocks[name] for name in DMM_BLOCKS}
    blocks["field"] = field.params
    save_checkpoint(Checkpoint(blocks, "pre-tmo", h, ck.dataset_hash), os.path.join(out, CK_PRE))
    write_csv(
        os.path.join(out, "flow_loss.csv"),
        ("epoch", "loss"),
        [{"epoch": i, "loss": float(v)} for i, v in enumerate(curve)],
        h,
    )
    print(f"trained flow on {len(zs)} latents -> {os.path.join(out, CK_PRE)}")
    return 0


def cmd_finetune(args):
    cfg, out, h = _ctx(args)
    ds = load_dataset(_require(os.path.join(out, DATASET), "collect"))
    ck = load_checkpoint(_require(os.path.join(out, CK_PRE), "train-flow"), expect_config_hash=h)
    enc, dec = _dmm_models(cfg, ck.blocks)
    field = _flow_model(cfg, ck.blocks["field"])
    dec, logs = tmo.finetune(
        enc, dec, field, ds, cfg.arm, cfg.space, cfg.task, cfg.tmo, cfg.flow, cfg.dmm, seed=cfg.seed
    )
    blocks = dict(ck.blocks)
    blocks["psi"] = dec.psi_params
    blocks["theta"] = dec.theta_params
    blocks["eta"] = dec.eta_params
    save_checkpoint(Checkpoint(blocks, "post-tmo", h, ck.dataset_hash), os.path.join(out, CK_POST))
    write_csv(
        os.path.join(out, "tmo_log.csv"),
        ("step", "loss", "task_error", "penalty", "recon"),
        logs,
        h,
    )
    print(f"fine-tuned decoder for {cfg.tmo.steps} steps -> {os.path.join(out, CK_POST)}")
    return 0


def cmd_evaluate(args):
    cfg, out, h = _ctx(args)
    _, dec, field, stage = _load_models(cfg, out, use_tmo=not args.no_tmo, h=h)
    grids = {"seen": list(cfg.space.seen_grid), "unseen": list(unseen_tasks(cfg))}
    rows = planner.evaluate(
        dec, field, cfg.arm, cfg.task, grids, cfg.candidates, cfg.flow, seed=cfg.seed
    )
    header = ("set", "stage", "rs", "SR", "error", "JL", "JVL", "JAL", "JJL", "CVL", "JTL", "COL",
              "retention", "RS_SR", "gen_seconds")
    for row in rows:
        row["stage"] = stage
        row["rs"] = int(not args.no_rs)
        if args.no_rs:
            row["retention"] = 100.0
            row["RS_SR"] = row["SR"]
    write_csv(os.path.join(out, "metrics.csv"), header, rows, h)
    for row in rows:
        print(f"{row['set']}: SR {row['SR']:.1f}%  mean error {row['error']:.4f} m  "
              f"retention {row['retention']:.1f}%")
    return 0


def _pick_motion(dec, field, cfg, tau, seed, no_rs: bool):
    motions = planner.generate(dec, field, tau, cfg.candidates, cfg.flow, seed)
    reports = planner.check_batch(dec, motions, cfg.arm, cfg.task, tau)
    pool = list(zip(motions, reports))
    if not no_rs:
        pool = [(m, r) for m, r in pool if r.feasible]
        if not pool:
            raise StageError("no feasible candidate after rejection sampling")
    return min(pool, key=lambda mr: mr[1].task_error)


def cmd_plan(args):
    cfg, out, h = _ctx(args)
    try:
        r, hh = (float(x) for x in args.task.split(","))
    except ValueError:
        print("--task expects `r,h` (e.g. 0.9,0.1)", file=sys.stderr)
        return 2
    _, dec, field, _ = _load_models(cfg, out, use_tmo=not args.no_tmo, h=h)
    motion, report = _pick_motion(dec, field, cfg, TaskParam(r, hh), cfg.seed, args.no_rs)
    grid = np.linspace(0.0, motion.T, cfg.dmm.L)
    qs = [np.asarray(motion.eval(grid, k)) for k in range(4)]
    n = cfg.arm.n
    header = ["t"] + [f"{p}{i}" for p in ("q", "dq", "ddq", "dddq") for i in range(n)]
    rows = [
        [float(grid[l])] + [float(qs[k][l, i]) for k in range(4) for i in range(n)]
        for l in range(len(grid))
    ]
    path = os.path.join(out, "plan_profile.csv")
    write_csv(path, header, rows, h)
    print(f"eta={motion.eta:.4f}s  error={np.sqrt(report.task_error):.4f}m  "
          f"feasible={report.feasible} -> {path}")
    return 0


def cmd_adapt(args):
    cfg, out, h = _ctx(args)
    with open(args.scenario, "r", encoding="utf-8") as f:
        events = json.load(f)
    if not events:
        print("scenario file has no events", file=sys.stderr)
        return 2
    _, dec, field, _ = _load_models(cfg, out, use_tmo=not args.no_tmo, h=h)
    first = events[0]
    motion, _ = _pick_motion(dec, field, cfg, TaskParam(first["r"], first["h"]), cfg.seed, args.no_rs)
    schedule, t_origin = motion, float(first.get("time", 0.0))
    rows = [{"time": t_origin, "r": first["r"], "h": first["h"], "status": "initial",
             "planning_seconds": 0.0, "eta_global": t_origin + motion.eta}]
    for ev in events[1:]:
        t = float(ev["time"])
        local = min(max(t - t_origin, 0.0), schedule.T) if schedule is motion else t
        if isinstance(schedule, planner.AdaptationPlan):
            q_c, dq_c = np.asarray(schedule.eval(t)), np.asarray(schedule.eval(t, 1))
        else:
            q_c, dq_c = np.asarray(schedule.eval(local)), np.asarray(schedule.eval(local, 1))
        plan, status = planner.adapt(
            (q_c, dq_c, t), TaskParam(ev["r"], ev["h"]), dec, field, cfg.arm, cfg.task,
            cfg.flow, seed=(cfg.seed, int(round(1000 * t))), K=cfg.candidates
        )
        row = {"time": t, "r": ev["r"], "h": ev["h"], "status": status,
               "planning_seconds": plan.planning_seconds if plan else float("nan"),
               "eta_global": plan.eta_global if plan else float("nan")}
        rows.append(row)
        if plan is not None:
            schedule = plan
    path = os.path.join(out, "adapt_log.csv")
    write_csv(path, ("time", "r", "h", "status", "planning_seconds", "eta_global"), rows, h)
    for row in rows:
        print(f"t={row['time']:.2f}s  task=({row['r']},{row['h']})  {row['status']}")
    return 0


def cmd_selftest(args):
    cfg, out, h = _ctx(args)
    from . import kernels
    from .kernels import pure
    from .task import TaskConfig, flight_time

    failures = []

    def prop(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    rng = np.random.default_rng(cfg.seed)
    qs = [s * rng.standard_normal((200, cfg.arm.n)) for s in (3.0, 4.0, 20.0, 200.0)]
    a = kernels.constraint_batch(cfg.arm, cfg.task, *qs)
    b = pure.constraint_batch(cfg.arm, cfg.task, *qs)
    prop(f"constraint kernel ({kernels.BACKEND}) matches reference", float(np.max(np.abs(a - b))) <= 1e-10)

    tc = TaskConfig()
    p = np.stack([rng.uniform(-1, 1, 1000), rng.uniform(0.5, 2.0, 1000)], axis=-1)
    v = np.stack([rng.uniform(0.1, 5, 1000), rng.uniform(-2, 5, 1000)], axis=-1)
    dt, reach = flight_time(p, v, 0.1, tc)
    res = p[:, 1] + v[:, 1] * dt - 0.5 * tc.g * dt**2 - 0.1
    prop("ballistic flight-time residual <= 1e-9", float(np.max(np.abs(res[reach]))) <= 1e-9)

    from .curves import BasisSet, TransitionCurve
    c = TransitionCurve(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3),
                        rng.standard_normal(3), rng.standard_normal((20, 3)), 1.0, BasisSet())
    ok = (np.allclose(np.asarray(c.eval(0.0)), c.q0, atol=1e-9)
          and np.allclose(np.asarray(c.eval(1.0)), c.qT, atol=1e-9)
          and np.allclose(np.asarray(c.eval(0.0, 1)), c.dq0, atol=1e-9)
          and np.allclose(np.asarray(c.eval(1.0, 1)), c.dqT, atol=1e-9))
    prop("transition curve boundary conditions", ok)

    return 1 if failures else 0


def main(argv=None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the toolkit config JSON")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--no-tmo", action="store_true", help="skip/ignore the fine-tuned decoder")
    common.add_argument("--no-rs", action="store_true", help="disable rejection sampling")

    p = argparse.ArgumentParser(prog="kinothrow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    handlers = {}
    for name, fn, extra in (
        ("collect", cmd_collect, ()),
        ("train-dmm", cmd_train_dmm, ()),
        ("train-flow", cmd_train_flow, ()),
        ("finetune", cmd_finetune, ()),
        ("evaluate", cmd_evaluate, ()),
        ("plan", cmd_plan, (("--task", dict(required=True, help="target `r,h` in meters")),)),
        ("adapt", cmd_adapt, (("--scenario", dict(required=True, help="JSON list of {time, r, h}")),)),
        ("selftest", cmd_selftest, ()),
    ):
        sp = sub.add_parser(name, parents=[common])
        for flag, kw in extra:
            sp.add_argument(flag, **kw)
        handlers[name] = fn
    args = p.parse_args(argv)
    try:
        return handlers[args.command](args)
    except (StageError, ConfigError, StorageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
