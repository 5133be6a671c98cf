"""Binary dataset format.

Layout (little-endian)::

    b"DPL1" | u32 version | u32 n_samples | u32 n_channels | u32 n | f64 period
    | f64 payload, per sample: inputs (n_channels*n) then output (n)
    | u32 manifest length | UTF-8 JSON manifest
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .grid import Grid
from .measures import Dataset

MAGIC = b"DPL1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


class FormatError(ValueError):
    pass


def dataset_to_bytes(ds: Dataset) -> bytes:
    n_samples, n_channels, n = ds.inputs.shape
    manifest = dict(ds.manifest)
    manifest.setdefault("grid", {})
    manifest["grid"] = {"n": n, "period": ds.grid.period, "origin": ds.grid.origin}
    rows = np.concatenate([ds.inputs.reshape(n_samples, n_channels * n), ds.outputs], axis=1)
    meta = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return b"".join([
        _HEADER.pack(MAGIC, VERSION, n_samples, n_channels, n, ds.grid.period),
        np.ascontiguousarray(rows, dtype="<f8").tobytes(),
        struct.pack("<I", len(meta)), meta,
    ])


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, n_samples, n_channels, n, period = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    off = _HEADER.size
    count = n_samples * (n_channels + 1) * n
    end = off + 8 * count
    if len(buf) < end + 4:
        raise FormatError("truncated payload")
    rows = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(float)
    rows = rows.reshape(n_samples, (n_channels + 1) * n)
    (mlen,) = struct.unpack_from("<I", buf, end)
    if len(buf) != end + 4 + mlen:
        raise FormatError("manifest length mismatch")
    manifest = json.loads(buf[end + 4:].decode("utf-8"))
    origin = manifest.get("grid", {}).get("origin", 0.0)
    grid = Grid(n, period, origin)
    inputs = rows[:, :n_channels * n].reshape(n_samples, n_channels, n)
    return Dataset(inputs, rows[:, n_channels * n:].copy(), grid, manifest)


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
