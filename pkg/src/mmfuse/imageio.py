"""Image codecs and color handling.

Mandatory formats: binary PGM/PPM (8-bit, maxval 255) and the lossless
float transport format used by the tests:

    magic "NFI1", u32 channels, u32 height, u32 width (little-endian),
    float32 payload, planar channel-major.

PNG is optional and needs Pillow. 8-bit values map to [0,1] as v/255;
color images convert to full-range BT.601 YCbCr, fusion runs on Y and
the chroma planes of the color source are reattached when saving.
"""

from __future__ import annotations

import os
import struct

import numpy as np

NFI_MAGIC = b"NFI1"


class ImageFormatError(IOError):
    pass


# ---------------------------------------------------------------------------
# Color conversion (BT.601 full range)

def rgb_to_ycbcr(rgb):
    r, g, b = rgb[0], rgb[1], rgb[2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 0.5
    return np.stack([y, cb, cr]).astype(np.float32)


def ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[0], ycc[1] - 0.5, ycc[2] - 0.5
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.clip(np.stack([r, g, b]), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Codecs

def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise ImageFormatError(f"truncated file {path} (wanted {n} more bytes)")
    return data


def load_nfi(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != NFI_MAGIC:
            raise ImageFormatError(f"bad magic in {path}")
        c, h, w = struct.unpack("<III", _read_exact(fh, 12, path))
        payload = _read_exact(fh, c * h * w * 4, path)
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()


def save_nfi(path, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim != 3:
        raise ImageFormatError(f"nfi arrays are (c,h,w), got {array.shape}")
    c, h, w = array.shape
    _atomic_write(path, NFI_MAGIC + struct.pack("<III", c, h, w) + array.tobytes())


def _parse_pnm_header(data, path):
    # magic, width, height, maxval separated by whitespace; '#' comments
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ImageFormatError(f"truncated header in {path}")
        ch = data[i:i + 1]
        if ch == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # single whitespace after maxval


def load_pnm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _parse_pnm_header(data, path)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r} in {path}")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 supported, got {maxval} in {path}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    if len(data) - offset < need:
        raise ImageFormatError(f"truncated pixel data in {path}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    img = pixels.reshape(h, w, channels).astype(np.float32) / 255.0
    return np.moveaxis(img, -1, 0).copy()


def save_pnm(path, array):
    array = np.asarray(array, dtype=np.float32)
    if array.ndim != 3 or array.shape[0] not in (1, 3):
        raise ImageFormatError(f"PNM arrays are (1|3,h,w), got {array.shape}")
    c, h, w = array.shape
    magic = b"P5" if c == 1 else b"P6"
    bytes8 = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    body = np.moveaxis(bytes8, 0, -1).tobytes()
    _atomic_write(path, magic + f"\n{w} {h}\n255\n".encode() + body)


def _pillow():
    try:
        from PIL import Image
    except ImportError as exc:
        raise ImageFormatError(
            "PNG support needs Pillow (pip install Pillow)") from exc
    return Image


def load_png(path):
    Image = _pillow()
    with Image.open(path) as im:
        im = im.convert("L") if im.mode in ("L", "I;16", "1") else im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        return arr[None, :, :].copy()
    return np.moveaxis(arr, -1, 0).copy()


def save_png(path, array):
    Image = _pillow()
    array = np.asarray(array, dtype=np.float32)
    bytes8 = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    if array.shape[0] == 1:
        im = Image.fromarray(bytes8[0], mode="L")
    else:
        im = Image.fromarray(np.moveaxis(bytes8, 0, -1), mode="RGB")
    tmp = f"{path}.tmp"
    im.save(tmp, format="PNG")
    os.replace(tmp, path)


def load_image(path):
    """Load any supported format as a (c,h,w) float32 array in [0,1]."""
    ext = os.path.splitext(path)[1].lower()
    if not os.path.exists(path):
        raise ImageFormatError(f"no such image: {path}")
    if ext == ".nfi":
        return load_nfi(path)
    if ext in (".pgm", ".ppm"):
        return load_pnm(path)
    if ext == ".png":
        return load_png(path)
    raise ImageFormatError(f"unsupported image format {ext!r} for {path}")


def save_image(path, array):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".nfi":
        save_nfi(path, array)
    elif ext in (".pgm", ".ppm"):
        save_pnm(path, array)
    elif ext == ".png":
        save_png(path, array)
    else:
        raise ImageFormatError(f"unsupported image format {ext!r} for {path}")


def load_gray(path):
    """Load as a (h,w) luminance map in [0,1]."""
    img = load_image(path)
    if img.shape[0] == 1:
        return img[0]
    return rgb_to_ycbcr(img)[0]


def _atomic_write(path, payload):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Padding helpers for the three stride-2 stages

def pad_to_multiple(img, multiple):
    """Reflect-pad a (h,w) map on the bottom/right; returns (padded, (h,w))."""
    h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="reflect")
    return img, (h, w)


def crop_to(img, size):
    h, w = size
    return img[:h, :w]
