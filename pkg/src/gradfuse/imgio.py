"""Image loading, saving, grayscale conversion and resizing.

Images travel through the pipeline as float64 arrays in [0,1]; files are
8-bit PNG or PGM.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

LUMA = np.array([0.299, 0.587, 0.114])


def load_image(path) -> np.ndarray:
    """Read PNG/PGM into [H,W] or [H,W,3] float64 in [0,1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            elif im.mode == "I;16":
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def save_image(path, arr: np.ndarray) -> None:
    """Write a [0,1] float array as 8-bit PNG/PGM."""
    path = Path(path)
    data = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(data * 255.0).astype(np.uint8)
    mode = "RGB" if u8.ndim == 3 else "L"
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, mode=mode).save(path)


def to_gray(arr: np.ndarray) -> np.ndarray:
    """Luma conversion (0.299/0.587/0.114); grayscale passes through."""
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ LUMA
    raise DataError(f"unsupported image shape {arr.shape}")


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Deterministic bilinear resampling (half-pixel centers)."""
    arr = np.asarray(arr, dtype=np.float64)
    H, W = arr.shape[:2]
    if (H, W) == (out_h, out_w):
        return arr.copy()
    ys = (np.arange(out_h) + 0.5) * (H / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (W / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, H - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    if arr.ndim == 3:
        wy_ = wy[:, None, None]
        wx_ = wx[None, :, None]
    else:
        wy_ = wy[:, None]
        wx_ = wx[None, :]
    top = arr[y0][:, x0] * (1 - wx_) + arr[y0][:, x1] * wx_
    bot = arr[y1][:, x0] * (1 - wx_) + arr[y1][:, x1] * wx_
    return top * (1 - wy_) + bot * wy_
