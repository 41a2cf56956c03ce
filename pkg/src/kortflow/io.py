"""Plain-text output: snapshots, diagnostics CSV, metadata JSON."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .functionals import DiagRecord


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dump_json(obj))


def snapshot_text(x, state, meta: dict) -> str:
    cols = [("x", x), ("rho", state.rho)]
    if state.u is not None:
        cols.append(("u", state.u))
    if state.q is not None:
        cols.append(("q", state.q))
    head = dict(meta)
    head["t"] = f"{state.t:.17g}"
    head["formulation"] = state.formulation.value
    head["columns"] = " ".join(c for c, _ in cols)
    lines = [f"# {k}={v}" for k, v in head.items()]
    data = np.column_stack([c for _, c in cols])
    lines.extend(" ".join(f"{v:.17g}" for v in row) for row in data)
    return "\n".join(lines) + "\n"


def read_snapshot(path):
    """(metadata dict, column dict) of a snapshot file."""
    meta, rows = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    arr = np.array(rows)
    return meta, {name: arr[:, i] for i, name in enumerate(meta["columns"].split())}


def diagnostics_csv(records) -> str:
    lines = [",".join(DiagRecord.columns())]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Columns of a CSV file: float arrays where every entry parses, else lists of text."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(head):
        col = [r[i] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return out


def table_csv(columns, rows) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([fmt(r.get(c, float("nan"))) for c in columns])
    return buf.getvalue()
