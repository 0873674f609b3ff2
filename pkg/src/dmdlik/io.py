"""File formats: headerless numeric CSV, JSON reports, atomic writes."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataFormatError


def atomic_write_bytes(path, data: bytes):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def format_matrix_csv(X) -> str:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    # repr of a float64 round-trips; %.17g always does and is locale independent
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in X)


def write_matrix_csv(path, X):
    atomic_write_text(path, format_matrix_csv(X))


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless numeric CSV; errors name the 1-based row and column."""
    path = Path(path)
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for i, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            vals = []
            for j, field in enumerate(rec, start=1):
                try:
                    vals.append(float(field))
                except ValueError:
                    raise DataFormatError(f"cannot parse {field.strip()!r} as a number", path=path, row=i, column=j) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataFormatError(f"expected {width} columns, found {len(vals)}", path=path, row=i, column=min(width, len(vals)) + 1)
            rows.append(vals)
    if not rows:
        raise DataFormatError("file contains no data", path=path)
    X = np.array(rows)
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise DataFormatError("non-finite value", path=path, row=int(i) + 1, column=int(j) + 1)
    return X


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """JSON text with non-finite floats as null and stable key order."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps_json(obj))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
