"""Naive per-pixel reference implementations.

Deliberately slow, loop-based twins of the optimized operators. They exist
to pin the fast paths: the self-check command and the test suite compare
against them on random inputs.
"""

from __future__ import annotations

import numpy as np


def naive_spatial_frequency(df: np.ndarray, radius: int) -> np.ndarray:
    """Literal windowed frequency of a [C,H,W] feature map -> [H,W].

    Coordinates outside the map are clamped to the nearest valid pixel
    before any difference is taken.
    """
    df = np.asarray(df, dtype=np.float64)
    if df.ndim != 3:
        raise ValueError(f"expected [C,H,W], got {df.shape}")
    C, H, W = df.shape

    def at(c, i, j):
        return df[c, min(max(i, 0), H - 1), min(max(j, 0), W - 1)]

    k = 2 * radius + 1
    out = np.zeros((H, W))
    for m in range(H):
        for n in range(W):
            rf2 = 0.0
            cf2 = 0.0
            for a in range(-radius, radius + 1):
                for b in range(-radius, radius + 1):
                    for c in range(C):
                        dh = at(c, m + a, n + b) - at(c, m + a, n + b - 1)
                        dv = at(c, m + a, n + b) - at(c, m + a - 1, n + b)
                        rf2 += dh * dh
                        cf2 += dv * dv
            rf = np.sqrt(rf2)
            cf = np.sqrt(cf2)
            out[m, n] = np.sqrt((cf * cf + rf * rf) / (k * k))
    return out


def naive_guided_filter(p: np.ndarray, guide: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Per-window guided filter of a [H,W] map, windows clipped at borders.

    Output clamped to [0,1], matching the fast implementation.
    """
    p = np.asarray(p, dtype=np.float64)
    I = np.asarray(guide, dtype=np.float64)
    if p.shape != I.shape or p.ndim != 2:
        raise ValueError(f"shape mismatch: {p.shape} vs {I.shape}")
    H, W = p.shape
    a = np.zeros((H, W))
    b = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            i0, i1 = max(i - radius, 0), min(i + radius, H - 1) + 1
            j0, j1 = max(j - radius, 0), min(j + radius, W - 1) + 1
            iw = I[i0:i1, j0:j1]
            pw = p[i0:i1, j0:j1]
            mi = iw.mean()
            mp = pw.mean()
            cov = (iw * pw).mean() - mi * mp
            var = (iw * iw).mean() - mi * mi
            a[i, j] = cov / (var + eps)
            b[i, j] = mp - a[i, j] * mi
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            i0, i1 = max(i - radius, 0), min(i + radius, H - 1) + 1
            j0, j1 = max(j - radius, 0), min(j + radius, W - 1) + 1
            out[i, j] = a[i0:i1, j0:j1].mean() * I[i, j] + b[i0:i1, j0:j1].mean()
    return np.clip(out, 0.0, 1.0)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def naive_sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel 3x3 sobel responses of a [H,W] image with edge replication."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    sx = np.zeros((H, W))
    sy = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    v = img[min(max(i + di, 0), H - 1), min(max(j + dj, 0), W - 1)]
                    sx[i, j] += SOBEL_X[di + 1, dj + 1] * v
                    sy[i, j] += SOBEL_Y[di + 1, dj + 1] * v
    return sx, sy


def naive_box_mean(x: np.ndarray, radius: int) -> np.ndarray:
    """Mean over border-clipped (2r+1)^2 windows of a [H,W] array."""
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            i0, i1 = max(i - radius, 0), min(i + radius, H - 1) + 1
            j0, j1 = max(j - radius, 0), min(j + radius, W - 1) + 1
            out[i, j] = x[i0:i1, j0:j1].mean()
    return out
