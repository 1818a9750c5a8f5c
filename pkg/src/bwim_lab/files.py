"""On-disk formats: CSV tables with JSON sidecars, and JSON checkpoints.

Every CSV starts with a ``# config_digest: ...`` comment line and has a
sidecar ``<name>.json`` next to it. Floats are written with ``repr`` so they
read back bit-for-bit. Writes go to a temporary file that is then renamed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dataset import Dataset, NormStats, SectionMap, SplitSpec
from .errors import ConfigError
from .models import Classifier, DoviConfig, make_model
from .structure import ResponseMatrix, SensorLayout
from .traffic import TrafficTrajectory

CHECKPOINT_VERSION = 1


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sidecar(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def write_json(path: str | Path, obj: Any) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence], digest: str | None) -> str:
    buf = io.StringIO()
    if digest is not None:
        buf.write(f"# config_digest: {digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _read_csv(path: str | Path) -> tuple[str | None, list[str], list[list[str]]]:
    digest = None
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            digest = first.split(":", 1)[1].strip()
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return digest, header, rows


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence],
                meta: dict, digest: str | None) -> Path:
    meta = dict(meta)
    if digest is not None:
        meta["config_digest"] = digest
    atomic_write_text(path, _csv_text(header, rows, digest))
    write_json(sidecar(path), meta)
    return Path(path)


# -- trajectory ---------------------------------------------------------------

TRAJ_COLUMNS = ("tick", "cell_index", "vehicle_id", "type_id", "weight_kg", "velocity")


def write_trajectory(path: str | Path, traj: TrafficTrajectory, meta: dict, digest: str | None = None) -> Path:
    t, c = np.nonzero(traj.vehicle_ids >= 0)
    vid = traj.vehicle_ids[t, c]
    rows = zip(t.tolist(), c.tolist(), vid.tolist(), traj.vehicle_types[vid].tolist(),
               traj.vehicle_weights[vid].tolist(), traj.velocities[t, c].tolist())
    meta = {**meta, "n_ticks": traj.n_ticks, "n_cells": traj.n_cells,
            "cell_length": traj.cell_length, "tick_duration": traj.tick_duration,
            "n_vehicles": len(traj.vehicle_weights)}
    return write_table(path, TRAJ_COLUMNS, rows, meta, digest)


def read_trajectory(path: str | Path) -> tuple[TrafficTrajectory, dict]:
    meta = read_json(sidecar(path))
    _, header, rows = _read_csv(path)
    if tuple(header) != TRAJ_COLUMNS:
        raise ConfigError(f"{path}: unexpected trajectory columns {header}")
    n_ticks, n_cells = meta["n_ticks"], meta["n_cells"]
    ids = np.full((n_ticks, n_cells), -1, dtype=np.int64)
    vel = np.zeros((n_ticks, n_cells), dtype=np.int64)
    n_veh = meta["n_vehicles"]
    types = np.full(n_veh, -1, dtype=np.int64)
    weights = np.zeros(n_veh)
    for tick, cell, vid, typ, w, v in rows:
        tick, cell, vid = int(tick), int(cell), int(vid)
        ids[tick, cell] = vid
        vel[tick, cell] = int(v)
        types[vid] = int(typ)
        weights[vid] = float(w)
    traj = TrafficTrajectory(ids, vel, types, weights, meta["cell_length"], meta["tick_duration"])
    return traj, meta


# -- response -----------------------------------------------------------------

def write_response(path: str | Path, resp: ResponseMatrix, meta: dict, digest: str | None = None) -> Path:
    header = ["t_seconds"] + [f"sensor_{i}" for i in range(resp.sensors.n)]
    t = np.arange(resp.n_instants) * resp.tick_duration
    rows = ([ti, *row] for ti, row in zip(t.tolist(), resp.values.tolist()))
    meta = {**resp.meta, **meta, "sample_dt": resp.tick_duration,
            "sensor_positions": list(resp.sensors.positions)}
    return write_table(path, header, rows, meta, digest)


def read_response(path: str | Path) -> tuple[ResponseMatrix, dict]:
    meta = read_json(sidecar(path))
    _, header, rows = _read_csv(path)
    values = np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), len(header) - 1)
    sensors = SensorLayout(tuple(meta["sensor_positions"]))
    return ResponseMatrix(values, meta["sample_dt"], sensors, meta), meta


# -- dataset ------------------------------------------------------------------

def write_dataset(path: str | Path, ds: Dataset, meta: dict, digest: str | None = None) -> Path:
    n = ds.values.shape[1]
    header = ["t_index"] + [f"sensor_{i}" for i in range(n)] + ["label"]
    rows = ([i, *row, lab] for i, (row, lab) in enumerate(zip(ds.values.tolist(), ds.labels.tolist())))
    meta = {
        **ds.meta, **meta,
        "norm_stats": ds.stats.to_dict(),
        "sections": {"boundaries": list(ds.sections.boundaries), "target": ds.sections.target,
                     "threshold_kg": ds.sections.threshold_kg},
        "sigma": ds.sigma, "threshold_kg": ds.sections.threshold_kg, "l": ds.window,
        "split": ds.split_spec.to_dict(),
        "positive_rate": float(ds.labels.mean()) if len(ds.labels) else 0.0,
    }
    return write_table(path, header, rows, meta, digest)


def read_dataset(path: str | Path) -> tuple[Dataset, dict]:
    meta = read_json(sidecar(path))
    _, header, rows = _read_csv(path)
    arr = np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), len(header) - 1)
    values, labels = arr[:, :-1], arr[:, -1].astype(np.int8)
    s = meta["sections"]
    sections = SectionMap(tuple(s["boundaries"]), s["target"], s["threshold_kg"])
    sp = meta["split"]
    spec = SplitSpec(tuple(sp["train"]), tuple(sp["val"]), tuple(sp["test"]))
    ds = Dataset(values, labels, meta["l"], spec, NormStats.from_dict(meta["norm_stats"]),
                 sections, meta["sigma"], meta)
    return ds, meta


# -- checkpoint ---------------------------------------------------------------

def checkpoint_dict(model: Classifier, extra: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": model.describe(),
        "parameters": {name: {"shape": list(p.shape), "values": p.data.ravel().tolist()}
                       for name, p in model.store.params.items()},
        **(extra or {}),
    }


def save_checkpoint(path: str | Path, model: Classifier, extra: dict | None = None) -> Path:
    return write_json(path, checkpoint_dict(model, extra))


def model_from_checkpoint(doc: dict) -> Classifier:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = dict(doc["config"])
    kind = cfg.pop("kind")
    n_sensors = cfg.pop("n_sensors")
    model = make_model(kind, n_sensors, DoviConfig(**cfg))
    params = doc["parameters"]
    if set(params) != set(model.store.params):
        raise ConfigError(f"checkpoint parameters {sorted(params)} do not match a {kind} model")
    arrays = {}
    for name, entry in params.items():
        shape = tuple(entry["shape"])
        if shape != model.store[name].shape:
            raise ConfigError(f"checkpoint {name}: shape {shape}, model expects {model.store[name].shape}")
        arrays[name] = np.array(entry["values"], dtype=np.float64).reshape(shape)
    model.store.load(arrays)
    return model


def load_checkpoint(path: str | Path) -> tuple[Classifier, dict]:
    doc = read_json(path)
    return model_from_checkpoint(doc), doc
