"""Flat float64 arrays with a one-line JSON header.

File layout: ``LIGHTRAY-RAW <json>\\n`` followed by the array as
little-endian float64 in C order.  The header always carries ``shape``.
"""
from __future__ import annotations

import json

import numpy as np

MAGIC = b"LIGHTRAY-RAW "


def write_raw(path, array, **meta) -> None:
    a = np.ascontiguousarray(array, dtype="<f8")
    head = dict(meta, shape=list(a.shape))
    with open(path, "wb") as fh:
        fh.write(MAGIC + json.dumps(head, sort_keys=True).encode() + b"\n")
        fh.write(a.tobytes())


def read_raw(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.startswith(MAGIC):
            raise ValueError(f"{path}: not a lightray raw file")
        head = json.loads(line[len(MAGIC):].decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(head["shape"]).astype(float), head
