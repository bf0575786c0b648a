"""Binary PPM (P6, maxval 255) image grids."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ContractError


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to bytes by (v + 1) * 127.5, rounded half-up, clipped."""
    v = np.floor((np.asarray(img, np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def grid(images: np.ndarray, cols: int = 8, pad: int = 1) -> np.ndarray:
    """(N, 3, S, S) -> (H, W, 3) uint8 mosaic, row-major, black padding."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ContractError(f"expected N×3×S×S images, got {images.shape}")
    n, _, h, w = images.shape
    cols = max(1, min(cols, n))
    rows = -(-n // cols)
    out = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), np.uint8)
    px = to_uint8(images).transpose(0, 2, 3, 1)
    for i in range(n):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        out[y : y + h, x : x + w] = px[i]
    return out


def write_ppm(path, rgb: np.ndarray):
    rgb = np.asarray(rgb, np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the pixels
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None or int(m.group(3)) != 255:
        raise ContractError("not a P6 file with maxval 255")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)
