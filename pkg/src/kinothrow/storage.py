"""Persistence: dataset files, model checkpoints, CSV artifacts.

Datasets are plain JSON (inspectable, diff-able); checkpoints are a JSON
metadata file plus a sidecar of raw little-endian float64 parameter
blocks.  All writes are atomic (temp file then rename) and round-trip
bit-exactly.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .curves import BasisSet, TransitionCurve, ViaPointCurve
from .datagen import Dataset, DatasetEntry, Motion, PiecewiseCurve
from .task import TaskParam

FORMAT_VERSION = 1


class StorageError(ValueError):
    """Unreadable, truncated, or version-mismatched artifact."""


def atomic_write_bytes(path, data: bytes):
    """Write a file atomically: temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path, header, rows, cfg_hash: str = None):
    """CSV with a header row and an optional config-hash comment line."""
    lines = []
    if cfg_hash is not None:
        lines.append(f"# config_hash={cfg_hash}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_csv_cell(row[k] if isinstance(row, dict) else row[i]) for i, k in enumerate(header)))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------- curves

def _curve_to_doc(curve) -> dict:
    if isinstance(curve, ViaPointCurve):
        return {
            "kind": "via",
            "q0": curve.q0.tolist(),
            "qT": curve.qT.tolist(),
            "w": curve.w.tolist(),
            "T": curve.T,
            "basis_count": curve.basis.count,
        }
    if isinstance(curve, TransitionCurve):
        return {
            "kind": "transition",
            "q0": curve.q0.tolist(),
            "dq0": curve.dq0.tolist(),
            "qT": curve.qT.tolist(),
            "dqT": curve.dqT.tolist(),
            "w": curve.w.tolist(),
            "T": curve.T,
            "basis_count": curve.basis.count,
        }
    if isinstance(curve, PiecewiseCurve):
        return {
            "kind": "piecewise",
            "first": _curve_to_doc(curve.first),
            "second": _curve_to_doc(curve.second),
            "split": curve.split,
        }
    raise StorageError(f"unserializable curve type {type(curve).__name__}")


def _curve_from_doc(doc: dict):
    kind = doc.get("kind")
    if kind == "via":
        return ViaPointCurve(
            np.array(doc["q0"]), np.array(doc["qT"]), np.array(doc["w"]), doc["T"], BasisSet(doc["basis_count"])
        )
    if kind == "transition":
        return TransitionCurve(
            np.array(doc["q0"]),
            np.array(doc["dq0"]),
            np.array(doc["qT"]),
            np.array(doc["dqT"]),
            np.array(doc["w"]),
            doc["T"],
            BasisSet(doc["basis_count"]),
        )
    if kind == "piecewise":
        return PiecewiseCurve(_curve_from_doc(doc["first"]), _curve_from_doc(doc["second"]), doc["split"])
    raise StorageError(f"unknown curve kind {kind!r}")


# ---------------------------------------------------------------- dataset

def dataset_to_doc(ds: Dataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "T": ds.T,
        "L": ds.L,
        "metadata": ds.metadata,
        "entries": [
            {
                "tau": [e.tau.r, e.tau.h],
                "eta": e.eta,
                "traj": np.asarray(e.traj).tolist(),
                "curve": _curve_to_doc(e.motion.source),
            }
            for e in ds.entries
        ],
    }


def save_dataset(ds: Dataset, path):
    atomic_write_text(path, json.dumps(dataset_to_doc(ds), indent=1))


def load_dataset(path) -> Dataset:
    doc = _read_json(path, "dataset")
    entries = tuple(
        DatasetEntry(
            tau=TaskParam(*e["tau"]),
            traj=np.asarray(e["traj"], dtype=np.float64),
            eta=float(e["eta"]),
            motion=Motion(_curve_from_doc(e["curve"]), float(e["eta"]), float(doc["T"])),
        )
        for e in doc["entries"]
    )
    return Dataset(entries, float(doc["T"]), int(doc["L"]), dict(doc["metadata"]))


def file_hash(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


# ------------------------------------------------------------- checkpoint

@dataclass(frozen=True)
class Checkpoint:
    """Named float64 parameter blocks plus provenance metadata."""

    blocks: dict  # name -> 1-D float64 array
    stage: str  # e.g. "dmm", "flow", "pre-tmo", "post-tmo"
    config_hash: str
    dataset_hash: str
    extra: dict = None


def save_checkpoint(ckpt: Checkpoint, path):
    """JSON metadata at `path`, raw parameter bytes at `path` + '.bin'."""
    path = os.fspath(path)
    offsets = []
    payload = bytearray()
    for name, arr in ckpt.blocks.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64).ravel()).astype("<f8")
        offsets.append({"name": name, "offset": len(payload) // 8, "size": int(a.size)})
        payload.extend(a.tobytes())
    meta = {
        "format_version": FORMAT_VERSION,
        "stage": ckpt.stage,
        "config_hash": ckpt.config_hash,
        "dataset_hash": ckpt.dataset_hash,
        "blocks": offsets,
        "sidecar": os.path.basename(path) + ".bin",
        "extra": ckpt.extra or {},
    }
    atomic_write_bytes(path + ".bin", bytes(payload))
    atomic_write_text(path, json.dumps(meta, indent=1))


def load_checkpoint(path, expect_config_hash: str = None) -> Checkpoint:
    """Load a checkpoint; structured errors on truncation or version skew."""
    path = os.fspath(path)
    meta = _read_json(path, "checkpoint")
    if meta.get("format_version") != FORMAT_VERSION:
        raise StorageError(
            f"checkpoint format version {meta.get('format_version')} != {FORMAT_VERSION}"
        )
    sidecar = os.path.join(os.path.dirname(path) or ".", meta["sidecar"])
    try:
        raw = open(sidecar, "rb").read()
    except OSError as e:
        raise StorageError(f"missing checkpoint sidecar {sidecar}: {e}") from e
    total = sum(b["size"] for b in meta["blocks"])
    if len(raw) != 8 * total:
        raise StorageError(
            f"truncated checkpoint sidecar {sidecar}: {len(raw)} bytes, expected {8 * total}"
        )
    flat = np.frombuffer(raw, dtype="<f8")
    blocks = {
        b["name"]: np.array(flat[b["offset"] : b["offset"] + b["size"]], dtype=np.float64)
        for b in meta["blocks"]
    }
    if expect_config_hash is not None and meta["config_hash"] != expect_config_hash:
        import warnings

        warnings.warn(
            f"checkpoint {path} was produced under config {meta['config_hash']}, "
            f"current config is {expect_config_hash}",
            stacklevel=2,
        )
    return Checkpoint(blocks, meta["stage"], meta["config_hash"], meta["dataset_hash"], meta["extra"])


def _read_json(path, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise StorageError(f"cannot read {what} {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise StorageError(f"corrupt {what} {path}: {e}") from e
