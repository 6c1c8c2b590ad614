"""PNG and raw-float image files.

PNGs are 8-bit with intensities mapped by ``round(255 * v)``. The raw format
is a lossless fixture container: the magic ``SAANRAW1``, three little-endian
``uint32`` dims ``(H, W, C)`` and then ``H*W*C`` little-endian float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from saan.imageops import check_image

RAW_MAGIC = b"SAANRAW1"


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_png(path: str | Path) -> np.ndarray:
    """Float64 ``H x W x C`` image in [0, 1]; C is 1 for grayscale, else 3."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path: str | Path, img: np.ndarray) -> None:
    img = check_image(img)
    data = to_uint8(img)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")


def write_raw(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"raw images are H x W x C, got shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<3I", *img.shape))
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_raw(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(RAW_MAGIC)) != RAW_MAGIC:
            raise ValueError(f"{path} is not a raw SAAN image")
        h, w, c = struct.unpack("<3I", fh.read(12))
        payload = fh.read()
    if len(payload) != 4 * h * w * c:
        raise ValueError(f"{path}: expected {4 * h * w * c} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float64)


def read_image(path: str | Path) -> np.ndarray:
    """Dispatch on the file's magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(len(RAW_MAGIC))
    return read_raw(path) if head == RAW_MAGIC else read_png(path)
