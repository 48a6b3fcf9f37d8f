"""Single-source-of-truth toolkit configuration.

One JSON file drives every pipeline stage.  Each section maps onto one of
the stage config dataclasses; omitted sections fall back to the documented
defaults, and unknown keys anywhere are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

import numpy as np

from .datagen import CollectConfig
from .latentflow import FlowConfig
from .manifold import DmmConfig
from .robot import Limits, PlanarArm, default_arm
from .task import TaskConfig, TaskSpace
from .tmo import TmoConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class ToolkitConfig:
    """Validated configuration for the whole pipeline."""

    arm: PlanarArm
    task: TaskConfig
    space: TaskSpace
    collect: CollectConfig
    dmm: DmmConfig
    flow: FlowConfig
    tmo: TmoConfig
    unseen_grid: tuple  # (n_r, n_h) for the held-out evaluation grid
    candidates: int  # K motions sampled per planning/evaluation call
    seed: int
    out_dir: str
    raw: dict = field(compare=False, repr=False, default_factory=dict)


_SECTIONS = (
    "arm",
    "task",
    "task_space",
    "collect",
    "dmm",
    "flow",
    "tmo",
    "evaluation",
    "seed",
    "out_dir",
)


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _build_dataclass(cls, d: dict, where: str, tuple_fields=()):
    names = [f.name for f in fields(cls)]
    _check_keys(d, names, where)
    kwargs = dict(d)
    for name in tuple_fields:
        if name in kwargs:
            kwargs[name] = tuple(kwargs[name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where} section: {e}") from e


def _build_arm(d: dict) -> PlanarArm:
    allowed = (
        "link_lengths",
        "link_masses",
        "com_offsets",
        "link_inertias",
        "gravity",
        "base",
        "collision_pairs",
        "limits",
    )
    _check_keys(d, allowed, "arm")
    lim_d = dict(d.get("limits", {}))
    lim_names = [f.name for f in fields(Limits)]
    _check_keys(lim_d, lim_names, "arm.limits")
    lengths = np.asarray(d["link_lengths"], dtype=np.float64)
    n = lengths.shape[0]
    lim_defaults = {
        "q_min": -np.pi * np.ones(n),
        "q_max": np.pi * np.ones(n),
        "dq_max": 3.0 * np.ones(n),
        "ddq_max": 15.0 * np.ones(n),
        "dddq_max": 150.0 * np.ones(n),
        "tau_max": 40.0 * np.ones(n),
        "v_ee_max": 4.0,
        "min_clearance": 0.02,
    }
    lim_kwargs = {
        k: (np.asarray(lim_d[k], dtype=np.float64) if k in lim_d else v)
        for k, v in lim_defaults.items()
    }
    if "w_ee_max" in lim_d:
        lim_kwargs["w_ee_max"] = float(lim_d["w_ee_max"])
    try:
        return PlanarArm(
            link_lengths=lengths,
            link_masses=np.asarray(d["link_masses"], dtype=np.float64),
            com_offsets=np.asarray(d.get("com_offsets", lengths / 2.0), dtype=np.float64),
            link_inertias=np.asarray(
                d.get("link_inertias", np.asarray(d["link_masses"]) * lengths**2 / 12.0),
                dtype=np.float64,
            ),
            limits=Limits(**lim_kwargs),
            gravity=float(d.get("gravity", 9.81)),
            p_b=np.asarray(d.get("base", (0.0, 0.0)), dtype=np.float64),
            collision_pairs=tuple(tuple(p) for p in d.get("collision_pairs", ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid arm section: {e}") from e


def _build_space(d: dict) -> TaskSpace:
    _check_keys(d, ("r", "h", "seen_grid"), "task_space")
    r = d.get("r", (0.7, 1.2))
    h = d.get("h", (0.0, 0.2))
    n_r, n_h = d.get("seen_grid", (6, 3))
    try:
        return TaskSpace.with_grid(float(r[0]), float(r[1]), float(h[0]), float(h[1]), int(n_r), int(n_h))
    except ValueError as e:
        raise ConfigError(f"invalid task_space section: {e}") from e


def parse_config(raw: dict) -> ToolkitConfig:
    """Build a validated ToolkitConfig from a parsed JSON document."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, _SECTIONS, "config")
    arm = _build_arm(raw["arm"]) if "arm" in raw else default_arm()
    task = _build_dataclass(TaskConfig, raw.get("task", {}), "task")
    space = _build_space(raw.get("task_space", {}))
    ev = dict(raw.get("evaluation", {}))
    _check_keys(ev, ("unseen_grid", "candidates"), "evaluation")
    return ToolkitConfig(
        arm=arm,
        task=task,
        space=space,
        collect=_build_dataclass(CollectConfig, raw.get("collect", {}), "collect"),
        dmm=_build_dataclass(
            DmmConfig,
            raw.get("dmm", {}),
            "dmm",
            tuple_fields=("enc_hidden", "psi_hidden", "theta_hidden", "eta_hidden"),
        ),
        flow=_build_dataclass(FlowConfig, raw.get("flow", {}), "flow", tuple_fields=("hidden",)),
        tmo=_build_dataclass(TmoConfig, raw.get("tmo", {}), "tmo"),
        unseen_grid=tuple(ev.get("unseen_grid", (5, 2))),
        candidates=int(ev.get("candidates", 100)),
        seed=int(raw.get("seed", 0)),
        out_dir=str(raw.get("out_dir", "artifacts")),
        raw=raw,
    )


def load_config(path) -> ToolkitConfig:
    """Parse and validate a config file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return parse_config(raw)


def config_hash(cfg: ToolkitConfig) -> str:
    """Stable digest of the normalized config document."""
    doc = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:16]


def unseen_tasks(cfg: ToolkitConfig) -> tuple:
    """Held-out evaluation grid: cell midpoints of a grid inset from the bounds."""
    s = cfg.space
    n_r, n_h = cfg.unseen_grid
    dr = (s.r_hi - s.r_lo) / (2 * n_r)
    dh = (s.h_hi - s.h_lo) / (2 * n_h)
    inner = TaskSpace.with_grid(s.r_lo + dr, s.r_hi - dr, s.h_lo + dh, s.h_hi - dh, n_r, n_h)
    return inner.seen_grid
