"""Pluggable sources of pretrained knowledge.

Two provider roles: a semantic provider that summarizes a feature map
into a fixed 512-dim vector (channel ranking guidance), and a text
provider that maps a prompt string to a 512-dim vector (channel
rearrangement guidance). Each role has a deterministic stub, usable
without any pretrained weights, and a file-backed implementation that
reads vectors exported offline into the binary embedding archive.

Archive layout (little-endian throughout):
    6-byte magic "UPEMB1"
    u32 dim, u32 count
    count x (u16 key length, UTF-8 key bytes)
    count x dim float32 payload, row-major
"""

from __future__ import annotations

import struct

import numpy as np

EMBED_DIM = 512
MAGIC = b"UPEMB1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class FormatError(ValueError):
    """Malformed embedding archive; message carries the byte offset."""


class EmbeddingLookupError(KeyError):
    pass


def fnv1a64(data: bytes, seed: int = 0) -> int:
    h = (_FNV_OFFSET ^ (seed & _MASK64)) & _MASK64
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def splitmix64_stream(seed: int, count: int) -> np.ndarray:
    """`count` floats in [-1, 1] from a SplitMix64 stream (vectorized)."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    state = np.uint64(seed & _MASK64) + idx * np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z / 2.0**63 - 1.0).astype(np.float32)


class EmbeddingVector:
    __slots__ = ("values", "source_tag")

    def __init__(self, values, source_tag):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"embedding must be a non-empty 1-D vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite entries")
        self.values = values
        self.source_tag = source_tag

    @property
    def dim(self):
        return self.values.size


# ---------------------------------------------------------------------------
# Archive codec

def dumps_embedding(entries):
    """Serialize (key, vector) pairs; all vectors must share one dimension."""
    entries = list(entries.items()) if isinstance(entries, dict) else list(entries)
    arrays = [np.asarray(v, dtype="<f4").reshape(-1) for _, v in entries]
    keys = [k for k, _ in entries]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate keys in embedding archive")
    dim = arrays[0].size if arrays else 0
    for k, a in zip(keys, arrays):
        if a.size != dim:
            raise ValueError(f"entry {k!r} has dim {a.size}, expected {dim}")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", dim, len(arrays))
    for k in keys:
        kb = k.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise ValueError(f"key too long: {k[:32]!r}...")
        blob += struct.pack("<H", len(kb))
        blob += kb
    for a in arrays:
        blob += a.tobytes()
    return bytes(blob)


def save_embedding_file(path, entries):
    with open(path, "wb") as fh:
        fh.write(dumps_embedding(entries))


def parse_embedding_blob(data, origin="<bytes>"):
    """Parse archive bytes into an ordered {key: float32 vector} dict."""
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic at byte 0 in {origin}")
    off = len(MAGIC)
    if len(data) < off + 8:
        raise FormatError(f"truncated header at byte {off} in {origin}")
    dim, count = struct.unpack_from("<II", data, off)
    off += 8
    keys = []
    for _ in range(count):
        if len(data) < off + 2:
            raise FormatError(f"truncated key table at byte {off} in {origin}")
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        if len(data) < off + klen:
            raise FormatError(f"truncated key at byte {off} in {origin}")
        keys.append(data[off:off + klen].decode("utf-8"))
        off += klen
    need = count * dim * 4
    if len(data) < off + need:
        raise FormatError(f"truncated payload at byte {off} in {origin} (need {need} bytes)")
    payload = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
    table = {}
    for i, k in enumerate(keys):
        if k in table:
            raise FormatError(f"duplicate key {k!r} in {origin}")
        table[k] = payload[i * dim:(i + 1) * dim].copy()
    return table


def load_embedding_file(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_embedding_blob(data, origin=str(path))


# ---------------------------------------------------------------------------
# Semantic providers (feature map -> vector)

class StubSemanticProvider:
    """Seeded projection of per-channel means; no pretrained weights.

    The projection matrix depends only on (seed, channel count), so the
    output varies smoothly with the feature content, which keeps training
    with the stub stable.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._proj_cache = {}

    def _projection(self, channels):
        proj = self._proj_cache.get(channels)
        if proj is None:
            h = fnv1a64(struct.pack("<qI", self.seed, channels), seed=0x5EED)
            proj = splitmix64_stream(h, EMBED_DIM * channels).reshape(EMBED_DIM, channels)
            self._proj_cache[channels] = proj
        return proj

    def semantic_vector(self, features, key=None):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 4:
            raise ValueError(f"semantic provider expects (n,c,h,w), got {features.shape}")
        c = features.shape[1]
        means = features.mean(axis=(0, 2, 3))
        vec = (self._projection(c) @ means) / np.sqrt(c)
        return EmbeddingVector(vec.astype(np.float32), "stub")


class FileSemanticProvider:
    """Vectors exported offline, keyed by source-image pair identity."""

    def __init__(self, path):
        self.path = path
        self._table = load_embedding_file(path)

    def semantic_vector(self, features, key=None):
        if key is None:
            raise EmbeddingLookupError(
                "file semantic provider needs a lookup key (source pair identity)")
        vec = self._table.get(key)
        if vec is None:
            raise EmbeddingLookupError(f"no semantic embedding for key {key!r} in {self.path}")
        return EmbeddingVector(vec, "file")


# ---------------------------------------------------------------------------
# Text providers (prompt -> vector)

class StubTextProvider:
    """Hash of the prompt expanded to 512 pseudo-random reals in [-1, 1]."""

    def __init__(self, seed=0):
        self.seed = int(seed)

    def text_vector(self, prompt):
        if not prompt:
            raise ValueError("prompt must be a non-empty string")
        h = fnv1a64(prompt.encode("utf-8"), seed=self.seed)
        return EmbeddingVector(splitmix64_stream(h, EMBED_DIM), "stub")


class FileTextProvider:
    """Prompt-keyed vectors from an exported archive."""

    def __init__(self, path):
        self.path = path
        self._table = load_embedding_file(path)

    def text_vector(self, prompt):
        if not prompt:
            raise ValueError("prompt must be a non-empty string")
        vec = self._table.get(prompt)
        if vec is None:
            raise EmbeddingLookupError(f"no text embedding for prompt {prompt!r} in {self.path}")
        return EmbeddingVector(vec, "file")
