"""File formats: comma-separated tables and JSON documents.

CSV files are UTF-8 with LF line endings, ``.`` as decimal separator and an
optional header row.  Floats are written with ``repr`` so that values
round-trip exactly.  Every write goes to a temporary file in the target
directory and is renamed into place.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DataError, EmptyData


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str] | None, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(list(header))
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_csv(path, header: bool | None = None) -> tuple[list[str] | None, np.ndarray]:
    """Numeric table from ``path``.

    ``header=None`` detects a header row by whether the first row parses as
    numbers.  Returns ``(names, values)`` with ``values`` of shape
    ``(rows, cols)``; an empty body gives ``(names, empty (0, cols))``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyData(f"{path} is empty")
    if header is None:
        header = not all(_is_number(c) for c in rows[0])
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    width = len(names) if names is not None else len(body[0])
    for k, r in enumerate(body):
        if len(r) != width:
            raise DataError(f"{path}: row {k + 1} has {len(r)} fields, expected {width}")
    try:
        values = np.array([[float(c) for c in r] for r in body], dtype=float).reshape(len(body), width)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    return names, values


def select_columns(names: list[str] | None, values: np.ndarray, wanted: Sequence[str | int]) -> np.ndarray:
    """Columns by header name, or by 0-based position when there is no header."""
    idx = []
    for w in wanted:
        if isinstance(w, (int, np.integer)) or (isinstance(w, str) and w.isdigit() and names is None):
            idx.append(int(w))
        elif names is None:
            raise DataError(f"column {w!r} requested by name but the file has no header")
        elif w not in names:
            raise DataError(f"column {w!r} not found; available: {names}")
        else:
            idx.append(names.index(w))
    if any(i < 0 or i >= values.shape[1] for i in idx):
        raise DataError(f"column index out of range for {values.shape[1]} columns")
    return values[:, idx]


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj: Any) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path) -> Any:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def write_jsonl(path, records) -> None:
    text = "".join(json.dumps(to_jsonable(r), sort_keys=True) + "\n" for r in records)
    atomic_write_text(path, text)


def read_jsonl(path) -> list[Any]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
