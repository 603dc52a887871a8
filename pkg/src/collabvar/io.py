"""CSV round-tripping for panels, coefficient matrices and result tables.

Floats are written with ``%.17g`` so a read-back is bitwise exact.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from collabvar.errors import IngestionError
from collabvar.var_core import TimeSeriesPanel, VarModel, as_lagspec

FLOAT_FMT = "%.17g"


def write_panel(panel: TimeSeriesPanel, path) -> Path:
    df = pd.DataFrame(np.asarray(panel.values), columns=list(panel.owners))
    if panel.timestamps is not None:
        df.insert(0, "timestamp", list(panel.timestamps))
    df.to_csv(path, index=False, float_format=FLOAT_FMT)
    return Path(path)


def read_panel(path) -> TimeSeriesPanel:
    df = pd.read_csv(path, float_precision="round_trip")
    ts = None
    if "timestamp" in df.columns:
        ts = tuple(df.pop("timestamp").astype(str))
    try:
        values = df.to_numpy(dtype=float)
    except ValueError as exc:
        raise IngestionError(f"{path}: non-numeric panel entries") from exc
    return TimeSeriesPanel(values, tuple(df.columns), ts)


def write_coefficients(model: VarModel, path) -> Path:
    """Long format: ``lag, source, target, value``."""
    B = np.asarray(model.coefficients)
    n = model.n_series
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "source", "target", "value"])
        for pos, lag in enumerate(model.lag_spec.lags):
            for i in range(n):
                for j in range(B.shape[1]):
                    w.writerow([lag, i, j, FLOAT_FMT % B[pos * n + i, j]])
    return Path(path)


def read_coefficients(path) -> VarModel:
    df = pd.read_csv(path, float_precision="round_trip")
    lags = sorted(df["lag"].unique().tolist())
    n = int(df["source"].max()) + 1
    cols = int(df["target"].max()) + 1
    B = np.zeros((n * len(lags), cols))
    for lag, i, j, v in df[["lag", "source", "target", "value"]].itertuples(index=False):
        B[lags.index(lag) * n + int(i), int(j)] = v
    return VarModel(B, as_lagspec(lags))


def _as_records(rows):
    if isinstance(rows, pd.DataFrame):
        return rows
    recs = [asdict(r) if is_dataclass(r) else dict(r) for r in rows]
    return pd.DataFrame(recs)


def write_table(rows, path) -> Path:
    """Dataclasses, dicts or a DataFrame to CSV."""
    _as_records(rows).to_csv(path, index=False, float_format=FLOAT_FMT)
    return Path(path)


def write_matrix(M, path) -> Path:
    np.savetxt(path, np.atleast_2d(np.asarray(M, float)), delimiter=",", fmt=FLOAT_FMT)
    return Path(path)


def atomic_write_json(obj, path) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    if is_dataclass(o):
        return asdict(o)
    return str(o)
