"""Lossless PNG encode/decode for frames (RGB) and masks (single channel)."""
from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image


def encode_png(arr: np.ndarray) -> bytes:
    if arr.dtype == bool:
        img = Image.fromarray(arr.astype(np.uint8) * 255, mode="L")
    else:
        img = Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8), mode="RGB" if arr.ndim == 3 else "L")
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


def decode_png(data: bytes, mask: bool = False) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        img.load()
        if mask:
            return np.asarray(img.convert("L")) > 127
        return np.asarray(img.convert("RGB")).copy()


def write_png(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(arr))


def read_png(path, mask: bool = False) -> np.ndarray:
    return decode_png(Path(path).read_bytes(), mask)


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
