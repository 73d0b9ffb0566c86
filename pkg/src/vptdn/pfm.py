"""Portable float map (PFM) and companion image I/O.

HDR frames and auxiliary buffers are exchanged as little-endian PFM
(negative scale marker, bottom-to-top row order per the format). Validity
masks use binary PGM; LDR exports use PNG via Pillow.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_pfm(path: str | Path, image: np.ndarray) -> None:
    """Write a (H,W) or (H,W,3) float image as Pf/PF, little-endian."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM file to float32, shape (H,W) or (H,W,3)."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: {path}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * (3 if tag == b"PF" else 1)
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dt).astype(np.float32)
    if tag == b"PF":
        img = data.reshape(h, w, 3)
    else:
        img = data.reshape(h, w)
    return np.flipud(img).copy()


def write_pgm(path: str | Path, mask: np.ndarray) -> None:
    """Write a (H,W) boolean/uint8 mask as binary PGM (255 = set)."""
    m = np.asarray(mask)
    img = (m.astype(np.uint8) * 255) if m.dtype == bool else m.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError(f"not a binary PGM file: {path}")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(v) for v in line.split())
        maxval = int(f.readline())
        dt = np.uint8 if maxval < 256 else ">u2"
        data = np.frombuffer(f.read(), dtype=dt)[: w * h]
    return data.reshape(h, w).copy()


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write an LDR image in [0,1] (H,W) or (H,W,3) as 8-bit PNG."""
    img = np.asarray(image, dtype=np.float64)
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(Path(path))


_HEAT_STOPS = np.array(
    [(0.0, 0.0, 0.0), (0.5, 0.0, 0.0), (1.0, 0.35, 0.0), (1.0, 0.85, 0.0), (1.0, 1.0, 1.0)]
)


def heatmap(values: np.ndarray, peak: float | None = None) -> np.ndarray:
    """False-color a single-channel image with a black-red-yellow-white ramp."""
    v = np.asarray(values, dtype=np.float64)
    top = float(v.max()) if peak is None else float(peak)
    t = np.clip(v / top, 0.0, 1.0) if top > 0 else np.zeros_like(v)
    x = t * (len(_HEAT_STOPS) - 1)
    i = np.minimum(x.astype(np.int64), len(_HEAT_STOPS) - 2)
    f = (x - i)[..., None]
    return _HEAT_STOPS[i] * (1 - f) + _HEAT_STOPS[i + 1] * f
