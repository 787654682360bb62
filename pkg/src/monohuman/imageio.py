from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_png(img: np.ndarray, path) -> None:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)).save(path)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


def save_pfm(img: np.ndarray, path) -> None:
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    color = arr.ndim == 3
    h, w = arr.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{w} {h}\n-1.0\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(arr[::-1]).tobytes())


def load_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    kind, dims, scale, data = parts[0], parts[1], parts[2], parts[3]
    if kind not in (b"PF", b"Pf"):
        raise ValueError(f"{path}: not a PFM file")
    w, h = (int(x) for x in dims.split())
    dtype = "<f4" if float(scale) < 0 else ">f4"
    ch = 3 if kind == b"PF" else 1
    arr = np.frombuffer(data, dtype=dtype, count=w * h * ch)
    arr = arr.reshape((h, w, ch) if ch == 3 else (h, w))[::-1]
    return np.ascontiguousarray(arr.astype(np.float32))
