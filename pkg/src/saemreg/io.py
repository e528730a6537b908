"""Long-format CSV and JSON input/output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import Curve, Dataset

HEADER = ("curve_id", "t", "y")


def fmt(x: float) -> str:
    """17 significant digits: enough for every double to round-trip exactly."""
    return format(float(x), ".17g")


def _parse_float(text: str, field: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}: field {field!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: field {field!r} is not finite: {text!r}")
    return v


def ingest_csv(path) -> Dataset:
    """Read a ``curve_id,t,y`` file; each curve's times are mapped affinely onto [0, 1].

    Rows may come in any order; curves keep the order of their first row.
    """
    rows: dict[str, list] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise DataError(f"line 1: expected header {','.join(HEADER)}, got {header!r}")
        for record in reader:
            line = reader.line_num
            if not record or all(not f.strip() for f in record):
                continue
            if len(record) != 3:
                raise DataError(f"line {line}: expected 3 fields, got {len(record)}")
            cid = record[0].strip()
            if not cid:
                raise DataError(f"line {line}: empty curve_id")
            t = _parse_float(record[1], "t", line)
            y = _parse_float(record[2], "y", line)
            rows.setdefault(cid, []).append((t, y, line))
    if not rows:
        raise DataError(f"{path}: no data rows")

    curves = []
    for cid, recs in rows.items():
        recs.sort(key=lambda r: (r[0], r[2]))
        ts = np.array([r[0] for r in recs])
        dup = np.flatnonzero(np.diff(ts) == 0)
        if dup.size:
            first, second = recs[dup[0]][2], recs[dup[0] + 1][2]
            raise DataError(f"line {second}: duplicate t={fmt(ts[dup[0]])} for curve {cid!r} (also on line {first})")
        if ts.size < 2:
            raise DataError(f"curve {cid!r} has a single time point (line {recs[0][2]}); cannot rescale")
        lo, hi = ts[0], ts[-1]
        scaled = (ts - lo) / (hi - lo)
        scaled[0], scaled[-1] = 0.0, 1.0
        curves.append(Curve(id=cid, ts=scaled, ys=np.array([r[1] for r in recs])))
    return Dataset(tuple(curves))


def write_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for c in dataset.curves:
            for t, y in zip(c.ts, c.ys):
                w.writerow((c.id, fmt(t), fmt(y)))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, non-finite floats as null."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
