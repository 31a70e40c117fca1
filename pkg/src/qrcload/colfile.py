"""Versioned columnar cache files.

Layout (all text lines are UTF-8, terminated by ``\\n``)::

    QRCCOL
    version=1
    rows=<n>
    columns=<name>,<name>,...
    meta.<key>=<value>        (zero or more)
    end
    <n * n_columns little-endian float64 values, row-major>

Metadata values are single-line strings; keys must not contain ``=``.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

MAGIC = "QRCCOL"
VERSION = 1


class ColumnFileError(ValueError):
    """Raised when a columnar file is malformed or from another version."""


def write_columns(path, columns, data, meta=None):
    """Write ``data`` (n_rows x n_columns) atomically to ``path``."""
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ColumnFileError(
            f"data shape {data.shape} does not match {len(columns)} columns"
        )
    for name in columns:
        if "," in name or "\n" in name:
            raise ColumnFileError(f"illegal column name {name!r}")
    lines = [MAGIC, f"version={VERSION}", f"rows={data.shape[0]}",
             "columns=" + ",".join(columns)]
    for key, value in sorted((meta or {}).items()):
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ColumnFileError(f"illegal metadata entry {key!r}")
        lines.append(f"meta.{key}={value}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_columns(path):
    """Return ``(columns, data, meta)`` from a file written by :func:`write_columns`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0
    header = {}
    meta = {}
    first = True
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ColumnFileError(f"{path}: truncated header")
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise ColumnFileError(f"{path}: bad magic {line!r}")
            first = False
            continue
        if line == "end":
            break
        key, sep, value = line.partition("=")
        if not sep:
            raise ColumnFileError(f"{path}: bad header line {line!r}")
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            header[key] = value
    try:
        version = int(header["version"])
        rows = int(header["rows"])
        columns = header["columns"].split(",") if header["columns"] else []
    except (KeyError, ValueError) as exc:
        raise ColumnFileError(f"{path}: incomplete header") from exc
    if version != VERSION:
        raise ColumnFileError(f"{path}: unsupported version {version}")
    body = raw[pos:]
    expected = rows * len(columns) * 8
    if len(body) != expected:
        raise ColumnFileError(
            f"{path}: body has {len(body)} bytes, expected {expected}"
        )
    data = np.frombuffer(body, dtype="<f8").reshape(rows, len(columns)).copy()
    return columns, data, meta


def array_digest(*arrays):
    """Stable short hash of array contents (dtype, shape and bytes)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]
