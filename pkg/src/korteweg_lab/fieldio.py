"""Flat binary and CSV layouts for grid fields.

Binary layout (little endian): ``int32 dim, int32 n, float64 L, int32 kind``
with kind 0 for a scalar field and 1 for a vector field, followed by the
float64 samples in row-major order, one component after another.  Reading back gives bit-identical arrays.
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .spectral import Field, Grid, VectorField

_HEADER = struct.Struct("<iidi")


def _split(obj):
    if isinstance(obj, VectorField):
        return obj.grid, obj.values.reshape(obj.grid.dim, -1)
    if isinstance(obj, Field):
        return obj.grid, obj.values.reshape(1, -1)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _build(grid: Grid, kind: int, flat: np.ndarray):
    ncomp = grid.dim if kind else 1
    if flat.size != ncomp * grid.node_count:
        raise ValueError(f"expected {ncomp * grid.node_count} samples, found {flat.size}")
    if kind == 0:
        return Field(grid, flat.reshape(grid.shape))
    if kind == 1:
        return VectorField(grid, flat.reshape((grid.dim,) + grid.shape))
    raise ValueError(f"unknown field kind {kind}")


def _kind(obj) -> int:
    return 1 if isinstance(obj, VectorField) else 0


def to_bytes(obj) -> bytes:
    grid, comps = _split(obj)
    head = _HEADER.pack(grid.dim, grid.n, grid.length, _kind(obj))
    return head + comps.astype("<f8").tobytes(order="C")


def from_bytes(data: bytes):
    if len(data) < _HEADER.size:
        raise ValueError("truncated field header")
    dim, n, length, kind = _HEADER.unpack_from(data)
    if (len(data) - _HEADER.size) % 8:
        raise ValueError("truncated field body")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return _build(Grid(dim, n, length), kind, body.astype(float))


def write_binary(path, obj) -> None:
    Path(path).write_bytes(to_bytes(obj))


def read_binary(path):
    return from_bytes(Path(path).read_bytes())


def to_csv(obj) -> str:
    """CSV text: a ``dim,n,L,kind`` header row, then one row per node.

    Values use ``repr`` so the text round-trips exactly as well.
    """
    grid, comps = _split(obj)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([grid.dim, grid.n, repr(grid.length), _kind(obj)])
    for row in comps.T:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def from_csv(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty CSV field")
    dim, n, length, kind = int(rows[0][0]), int(rows[0][1]), float(rows[0][2]), int(rows[0][3])
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    return _build(Grid(dim, n, length), kind, data.T.ravel())


def write_csv(path, obj) -> None:
    Path(path).write_text(to_csv(obj))


def read_csv(path):
    return from_csv(Path(path).read_text())
