"""Result writers: RFC-4180 CSV, stable-order JSON and long-format plot data."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

LONG_HEADER = ("experiment", "n", "series", "value")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def write_csv(path, header, rows):
    """Header plus rows, CRLF line ends and minimal quoting (RFC 4180)."""
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        vals = [r.get(k) for k in header] if isinstance(r, dict) else list(r)
        w.writerow([_cell(v) for v in vals])
    return _atomic_write(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _jsonable(obj.item())
    return obj


def write_json(path, obj):
    """UTF-8 JSON with sorted keys; non-finite floats become ``null``."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    return _atomic_write(path, text)


def write_long(path, rows):
    """Plot-ready ``(experiment, n, series, value)`` rows."""
    return write_csv(path, LONG_HEADER, [tuple(r) for r in rows])
