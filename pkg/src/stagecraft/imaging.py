"""Small raster helpers shared across the pipeline.

Images are grayscale numpy arrays: ``uint8`` in [0, 255] at canvas
resolution, or ``float64`` in [0, 1] for internal rasters (mid-state
canvases, latents, masks as 0/1).  All resampling here is deterministic.
"""
from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image


def to_float01(image: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float64 [0,1]; float arrays pass through."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def to_uint8(raster: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(np.asarray(raster, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def nearest_resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample to (height, width) with center alignment."""
    src = np.asarray(arr)
    out_h, out_w = shape
    in_h, in_w = src.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
    return src[np.ix_(rows, cols)]


def bilinear_resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample to (height, width), center-aligned, float64 output."""
    src = np.asarray(arr, dtype=np.float64)
    out_h, out_w = shape
    in_h, in_w = src.shape

    def axis_coords(out_n: int, in_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
        pos = np.clip(pos, 0.0, in_n - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, in_n - 1)
        frac = pos - lo
        return lo, hi, frac

    r_lo, r_hi, r_f = axis_coords(out_h, in_h)
    c_lo, c_hi, c_f = axis_coords(out_w, in_w)
    top = src[np.ix_(r_lo, c_lo)] * (1 - c_f) + src[np.ix_(r_lo, c_hi)] * c_f
    bot = src[np.ix_(r_hi, c_lo)] * (1 - c_f) + src[np.ix_(r_hi, c_hi)] * c_f
    return top * (1 - r_f)[:, None] + bot * r_f[:, None]


def block_reduce_mean(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Area-average downsample; exact block means when shapes divide evenly."""
    src = np.asarray(arr, dtype=np.float64)
    out_h, out_w = shape
    in_h, in_w = src.shape
    if in_h % out_h == 0 and in_w % out_w == 0:
        bh, bw = in_h // out_h, in_w // out_w
        return src.reshape(out_h, bh, out_w, bw).mean(axis=(1, 3))
    return bilinear_resize(src, shape)


def stable_hash64(*parts) -> int:
    """Platform-stable 64-bit hash of the string forms of ``parts``."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)
