"""Versioned binary container for model parameters.

Layout (all integers little-endian):

    magic   4 bytes  b"WVFN"
    version u32      currently 1
    records until end of file, each:
        name_len u16, name bytes (utf-8),
        rank     u8,  dims u32 * rank,
        payload  float32 * prod(dims)

Round-trips are bit-exact: save -> load -> save reproduces the file.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError, FormatError

MAGIC = b"WVFN"
VERSION = 1


def save_model(path, model) -> None:
    write_records(path, [(name, p.data) for name, p in model.named_parameters()])


def write_records(path, records) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in records:
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f4").tobytes())


def read_records(path) -> list:
    """Parse a checkpoint into [(name, float32 array)]; strict about size."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n, what):
        if offset + n > len(blob):
            raise FormatError(f"truncated checkpoint: {what} needs {n} bytes at offset {offset}, "
                              f"file has {len(blob)}")

    need(0, 4, "magic")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} at offset 0; expected {MAGIC!r}")
    need(4, 4, "version")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")

    records = []
    pos = 8
    while pos < len(blob):
        need(pos, 2, "record name length")
        name_len = struct.unpack_from("<H", blob, pos)[0]
        pos += 2
        need(pos, name_len, "record name")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        need(pos, 1, "record rank")
        rank = blob[pos]
        pos += 1
        need(pos, 4 * rank, "record dims")
        dims = struct.unpack_from(f"<{rank}I" if rank else "<0I", blob, pos)
        pos += 4 * rank
        count = 1
        for dim in dims:
            count *= dim
        need(pos, 4 * count, f"payload of {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        records.append((name, arr))
    return records


def load_model(path, model) -> None:
    """Install checkpoint parameters into ``model`` (cast to its dtype).

    The record set must match the model's parameter names and shapes exactly.
    """
    records = read_records(path)
    params = dict(model.named_parameters())
    seen = set()
    for name, arr in records:
        if name not in params:
            raise CheckpointError(f"checkpoint parameter {name!r} unknown to this model")
        if name in seen:
            raise CheckpointError(f"duplicate checkpoint parameter {name!r}")
        seen.add(name)
        target = params[name]
        if arr.shape != target.data.shape:
            raise CheckpointError(f"parameter {name!r}: checkpoint shape {list(arr.shape)} "
                                  f"!= model shape {list(target.data.shape)}")
        target.data = arr.astype(model.dtype)
    missing = sorted(set(params) - seen)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
