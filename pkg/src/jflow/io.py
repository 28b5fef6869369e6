"""Artifact files: trajectory CSV, JSON reports and raw float64 fields."""

import csv
import json
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = (
    "t", "dt", "sup_phi", "inf_phi", "residual", "I", "J_cum", "max_lambda_omega_chi", "min_eig_chi",
)


def _fmt(x):
    return repr(float(x))


def write_trajectory_csv(path, diagnostics):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for d in diagnostics:
            writer.writerow([_fmt(v) for v in (
                d.t, d.dt, d.sup_phi, d.inf_phi, d.residual, d.I_value, d.J_value,
                d.max_lambda_omega_chi, d.min_eig_chi,
            )])


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in TRAJECTORY_COLUMNS}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_field(path, phi, **meta):
    """Raw little-endian float64 in C order plus a JSON sidecar with the shape."""
    path = Path(path)
    arr = np.ascontiguousarray(phi, dtype="<f8")
    arr.tofile(path)
    write_json(sidecar_path(path), {"shape": list(arr.shape), "dtype": "<f8", "order": "C", **meta})


def read_field(path):
    path = Path(path)
    with open(sidecar_path(path)) as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype=meta.get("dtype", "<f8"))
    return data.reshape(meta["shape"]).astype(np.float64), meta
