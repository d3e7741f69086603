"""Single-file parameter checkpoints.

Layout::

    b"JSECKPT\\n"                 magic
    uint64 little-endian           header length in bytes
    header (UTF-8 JSON)            {"version", "meta", "tensors": [{name, shape, dtype, offset, nbytes}]}
    raw little-endian array data   concatenated in manifest order
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from ..errors import InvalidInputError

MAGIC = b"JSECKPT\n"
VERSION = 1


def save_checkpoint(path, arrays, meta=None):
    """Atomically write ``arrays`` (name -> ndarray) and JSON-able ``meta``."""
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": manifest}).encode()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(arrays, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise InvalidInputError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(blob[start:start + hlen].decode())
    if header.get("version") != VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {header.get('version')}")
    base = start + hlen
    arrays = {}
    for rec in header["tensors"]:
        raw = blob[base + rec["offset"]: base + rec["offset"] + rec["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"])
        arrays[rec["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return arrays, header["meta"]
