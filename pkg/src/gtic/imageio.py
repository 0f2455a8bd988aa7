"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

import os

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed PPM header")
        out.append(int(data[start:pos]))
    return out, pos


def decode_ppm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic == b"P3":
        raise ImageFormatError("ASCII PPM (P3) is not supported; convert to binary P6")
    if magic != b"P6":
        raise ImageFormatError(f"bad magic {magic!r}: not a binary PPM (P6) file")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 255 is accepted")
    if w < 1 or h < 1:
        raise ImageFormatError(f"empty image {w}x{h}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PPM header")
    pos += 1
    need = w * h * 3
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"truncated pixel data: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).astype(np.float32) / 255.0


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected an HxWx3 image, got shape {img.shape}")
    h, w, _ = img.shape
    raster = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + raster.tobytes()


def load_image(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    data = encode_ppm(img)
    with open(path, "wb") as f:
        f.write(data)


def to_8bit(img: np.ndarray) -> np.ndarray:
    """The values a saved-then-loaded copy of ``img`` would hold."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.float32) / 255.0
