"""Writer for the fusion embedding archive (wire format).

Layout, little-endian:
    6-byte magic "UPEMB1"
    u32 dim, u32 count
    count x (u16 key length, UTF-8 key bytes)
    count x dim float32 payload, row-major
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"UPEMB1"


def dump_archive(entries):
    """Serialize ordered (key, vector) pairs; one shared dimension."""
    keys = [k for k, _ in entries]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate keys in archive")
    arrays = [np.asarray(v, dtype="<f4").reshape(-1) for _, v in entries]
    dim = arrays[0].size if arrays else 0
    for key, arr in zip(keys, arrays):
        if arr.size != dim:
            raise ValueError(f"entry {key!r} has dim {arr.size}, expected {dim}")
    blob = bytearray(MAGIC)
    blob += struct.pack("<II", dim, len(arrays))
    for key in keys:
        encoded = key.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
    for arr in arrays:
        blob += arr.tobytes()
    return bytes(blob)


def write_archive(path, entries):
    with open(path, "wb") as fh:
        fh.write(dump_archive(entries))


def read_archive(path):
    """Reader used for self-verification after export."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"bad magic in {path}")
    dim, count = struct.unpack_from("<II", data, len(MAGIC))
    off = len(MAGIC) + 8
    keys = []
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        keys.append(data[off:off + klen].decode("utf-8"))
        off += klen
    payload = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
    return {k: payload[i * dim:(i + 1) * dim].copy() for i, k in enumerate(keys)}
