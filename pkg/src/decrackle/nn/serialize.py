"""Checkpoint container: JSON header plus raw little-endian tensors.

Layout: magic "DCRK", format version, header length, header JSON
(hyperparameters and a parameter index with offsets), then the
concatenated raw values. Save/load round trips are bit-exact.
"""
from __future__ import annotations

import json
import struct

import numpy as np

_MAGIC = b"DCRK"
_VERSION = 1


def save_checkpoint(path, arrays: dict, hyperparameters: dict | None = None) -> None:
    index = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        index.append(
            {
                "name": name,
                "dtype": dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {
            "format_version": _VERSION,
            "hyperparameters": hyperparameters or {},
            "params": index,
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Returns (hyperparameters, {name: ndarray})."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        blob = fh.read()
    arrays = {}
    for meta in header["params"]:
        raw = blob[meta["offset"] : meta["offset"] + meta["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"]))
        arrays[meta["name"]] = arr.reshape(meta["shape"]).copy()
    return header["hyperparameters"], arrays
