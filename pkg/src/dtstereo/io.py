"""File formats: flat binary grids, small-grid CSV, key-value reports."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
import yaml

MAGIC = b"DTSG"
_HEADER = struct.Struct("<4sIII")


def write_grid(path, array) -> None:
    """Write an H x W (x B) array as 16-byte header + row-major float32."""
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"grid must be 2-D or 3-D, got shape {a.shape}")
    H, W, B = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, H, W, B))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_grid(path) -> np.ndarray:
    """Read a grid written by :func:`write_grid`; returns ``H x W x B`` float32."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, H, W, B = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != H * W * B:
        raise ValueError(f"{path}: expected {H * W * B} values, found {body.size}")
    return body.reshape(H, W, B).astype(np.float32)


def write_grid_csv(path, array) -> None:
    """Rows ``row,col,bin,value`` for small grids."""
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[..., None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "bin", "value"])
        for (r, c, b), v in np.ndenumerate(a):
            w.writerow([r, c, b, repr(float(v))])


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros((0, 0, 0))
    idx = np.array([[int(r["row"]), int(r["col"]), int(r["bin"])] for r in rows])
    out = np.zeros(idx.max(axis=0) + 1)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = [float(r["value"]) for r in rows]
    return out


def write_csv(path, rows, fieldnames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_keyvalue(path, mapping) -> None:
    clean = {k: (float(v) if isinstance(v, (np.floating, float)) else int(v) if isinstance(v, np.integer) else v)
             for k, v in mapping.items()}
    Path(path).write_text(yaml.safe_dump(clean, sort_keys=False))


def read_keyvalue(path) -> dict:
    return yaml.safe_load(Path(path).read_text()) or {}
