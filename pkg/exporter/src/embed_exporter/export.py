"""Export orchestration: manifest in, embedding archive out.

Image entries may name one file or two comma-separated files; two
sources are averaged and replicated to 3 channels before the backbone
(matching how the fusion side derives its semantic key from the source
pair). Backbone features are projected to 512 dimensions by a
fixed-seed orthonormal matrix, which is stored inside the archive under
reserved `__projection__/NNNN` rows so a fresh run is reproducible from
the file alone. Text entries are encoded directly (already 512-dim).
"""

from __future__ import annotations

import os
import struct

import numpy as np
from PIL import Image

from .archive import write_archive
from .backends import IMAGENET_MEAN, IMAGENET_STD, TEXT_DIM

PROJECTION_PREFIX = "__projection__/"
PROJECTION_SEED = 7


class ManifestError(ValueError):
    pass


class EntryError(RuntimeError):
    def __init__(self, key, reason):
        super().__init__(f"entry {key!r}: {reason}")
        self.key = key


def parse_manifest(path):
    """Tab-separated lines: <key> <kind> <source>; '#' starts a comment."""
    entries = []
    seen = set()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(
                    f"{path}:{lineno}: expected <key>\\t<kind>\\t<source>, got {line!r}")
            key, kind, source = (p.strip() for p in parts)
            if kind not in ("image", "text"):
                raise ManifestError(f"{path}:{lineno}: kind must be image|text, got {kind!r}")
            if not key:
                raise ManifestError(f"{path}:{lineno}: empty key")
            if key in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate key {key!r}")
            if key.startswith("__"):
                raise ManifestError(f"{path}:{lineno}: keys starting with __ are reserved")
            seen.add(key)
            if kind == "image":
                for src in source.split(","):
                    if not os.path.exists(src.strip()):
                        raise ManifestError(f"{path}:{lineno}: image not found: {src.strip()}")
            entries.append((key, kind, source))
    return entries


# ---------------------------------------------------------------------------
# Image loading and preprocessing

def _load_float_image(path):
    """(c, h, w) float32 in [0,1] from PNG/PGM/PPM (PIL) or .nfi."""
    if path.lower().endswith(".nfi"):
        with open(path, "rb") as fh:
            if fh.read(4) != b"NFI1":
                raise EntryError(path, "bad .nfi magic")
            c, h, w = struct.unpack("<III", fh.read(12))
            payload = fh.read(c * h * w * 4)
        if len(payload) != c * h * w * 4:
            raise EntryError(path, "truncated .nfi payload")
        return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()
    with Image.open(path) as img:
        img = img.convert("L") if img.mode in ("L", "1", "I;16") else img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return np.moveaxis(arr, -1, 0).copy()


def _resize_center_crop(gray, size=224):
    """Nearest-neighbor resize of the shorter side to `size`, center crop."""
    h, w = gray.shape
    scale = size / min(h, w)
    nh, nw = max(size, int(round(h * scale))), max(size, int(round(w * scale)))
    ys = np.clip((np.arange(nh) * h) // nh, 0, h - 1)
    xs = np.clip((np.arange(nw) * w) // nw, 0, w - 1)
    resized = gray[np.ix_(ys, xs)]
    top = (nh - size) // 2
    left = (nw - size) // 2
    return resized[top:top + size, left:left + size]


def prepare_image_input(sources):
    """Average the sources' luminance, replicate to 3 channels, normalize."""
    grays = []
    for src in sources:
        img = _load_float_image(src)
        gray = img[0] if img.shape[0] == 1 else (
            0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])
        grays.append(_resize_center_crop(gray))
    mean_gray = np.mean(grays, axis=0)
    rgb = np.repeat(mean_gray[None], 3, axis=0)
    return ((rgb - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]).astype(np.float32)


# ---------------------------------------------------------------------------
# Projection and export

def orthonormal_projection(feature_dim, seed=PROJECTION_SEED):
    """(feature_dim, 512) matrix with orthonormal columns, fixed seed."""
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((feature_dim, TEXT_DIM))
    q, r = np.linalg.qr(gauss)
    # fix the sign convention so the decomposition is unique
    q *= np.sign(np.diag(r))[None, :]
    return q.astype(np.float32)


def export(entries, out_path, image_backend, text_backend, keep_partial=False):
    """Encode every manifest entry and write the archive.

    Per-entry failures abort the export unless `keep_partial` is set, in
    which case the remaining entries are still written. Returns
    (written keys, list of (key, error message)).
    """
    projection = orthonormal_projection(image_backend.feature_dim)
    rows = []
    failures = []
    for key, kind, source in entries:
        try:
            if kind == "text":
                vec = np.asarray(text_backend.encode(source), dtype=np.float32)
                if vec.size != TEXT_DIM:
                    raise EntryError(key, f"text encoder returned dim {vec.size}")
            else:
                sources = [s.strip() for s in source.split(",")]
                feats = image_backend.features(prepare_image_input(sources))
                vec = (feats @ projection).astype(np.float32)
        except Exception as exc:  # per-entry isolation
            failures.append((key, str(exc)))
            if not keep_partial:
                raise
            continue
        rows.append((key, vec))

    for i, row in enumerate(projection):
        rows.append((f"{PROJECTION_PREFIX}{i:04d}", row))
    write_archive(out_path, rows)
    return [k for k, _ in rows if not k.startswith("__")], failures
