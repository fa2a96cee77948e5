"""Flat-file cache for expensive tables.

The directory comes from ``DISLOGAMMA_CACHE_DIR`` (default
``~/.cache/dislogamma``); setting it to ``off`` disables the disk layer.
Entries are ``.npz`` files named by the SHA-256 of a canonical JSON key and
are created atomically, so concurrent writers never expose partial files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

ENV_VAR = "DISLOGAMMA_CACHE_DIR"
# bump when a cached computation changes so stale entries are ignored
REVISION = 1

_memory: dict[str, dict[str, np.ndarray]] = {}


def cache_dir():
    """Active cache directory, or ``None`` when the disk cache is disabled."""
    raw = os.environ.get(ENV_VAR)
    if raw is not None and raw.strip().lower() in ("", "off", "none", "0"):
        return None
    path = Path(raw) if raw else Path.home() / ".cache" / "dislogamma"
    return path


def key_hash(key):
    blob = json.dumps({"rev": REVISION, "key": key}, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def cached_arrays(key, compute):
    """Return ``compute()`` (a dict of arrays), memoised on ``key``."""
    h = key_hash(key)
    if h in _memory:
        return _memory[h]
    d = cache_dir()
    path = d / f"{h}.npz" if d is not None else None
    if path is not None and path.exists():
        try:
            with np.load(path) as z:
                data = {k: z[k] for k in z.files}
            _memory[h] = data
            return data
        except (OSError, ValueError):
            pass  # unreadable entry: recompute and overwrite
    data = {k: np.asarray(v) for k, v in compute().items()}
    _memory[h] = data
    if path is not None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **data)
            os.replace(tmp, path)
        except OSError:
            pass
    return data


def clear_memory():
    _memory.clear()
