"""Image-level compression and decompression with a trained model."""

from __future__ import annotations

import numpy as np

from . import bitstream
from .bitstream import Bitstream, Header
from .checkpoint import Checkpoint
from .data import pad_to_multiple
from .pipeline import analyze, decode


class ModelMismatchError(ValueError):
    pass


def table_mode(model: Checkpoint, fixed_code: bool = False) -> str:
    if not model.config.entropy:
        return "raw"
    return "fixed" if fixed_code else "adaptive"


def _eval_stores(model: Checkpoint):
    for s in model.stores.values():
        s.eval()
    return model.stores


def analyze_image(img: np.ndarray, model: Checkpoint, n: float) -> tuple[np.ndarray, Header]:
    """Pad, encode, mask and quantize one HxWx3 image; returns z and a header template."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {img.shape}")
    cfg = model.pipeline
    padded = pad_to_multiple(img)
    z = analyze(padded[None], _eval_stores(model), cfg, n)[0]
    header = Header.for_image(img.shape[0], img.shape[1], cfg.K, cfg.L, n)
    return z, header


def compress(img: np.ndarray, model: Checkpoint, n: float, mode: str | None = None) -> Bitstream:
    if not -2.0 <= n <= 2.0:
        raise ValueError(f"n must lie in [-2, 2], got {n}")
    mode = mode or table_mode(model)
    z, header = analyze_image(img, model, n)
    header = Header(header.orig_h, header.orig_w, header.pad_h, header.pad_w, header.K, header.L, n, mode)
    return bitstream.encode_stream(z, bitstream.make_table(z, header.L, mode), header)


def check_compatible(header: Header, model: Checkpoint) -> None:
    cfg = model.config
    if header.K != cfg.K:
        raise ModelMismatchError(f"stream has K={header.K} but the model has K={cfg.K}")
    if header.L != cfg.L:
        raise ModelMismatchError(f"stream has L={header.L} but the model has L={cfg.L}")


def decompress(data: bytes | Bitstream, model: Checkpoint) -> np.ndarray:
    """Decode a ``.gtc`` stream to an HxWx3 float image cropped to the original size."""
    bs = data if isinstance(data, Bitstream) else Bitstream.from_bytes(bytes(data))
    check_compatible(bs.header, model)
    z = bitstream.decode_stream(bs)
    xhat = decode(z[None], _eval_stores(model)["decoder"])[0]
    return xhat[:bs.header.orig_h, :bs.header.orig_w]
