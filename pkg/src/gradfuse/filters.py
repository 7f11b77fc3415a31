"""Differentiable signal operators used by the fusion pipeline: the
pixel-wise spatial-frequency activity measure and the guided filter.

Both are built from tape primitives so gradients flow through them; both are
pinned to naive per-pixel oracles in :mod:`gradfuse.reference`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _shift_right_edge(x: Tensor) -> Tensor:
    # y[..., j] = x[..., max(j-1, 0)]
    return ad.crop2d(ad.pad2d(x, (0, 0, 1, 0), "replicate"), (0, 0, 0, 1))


def _shift_down_edge(x: Tensor) -> Tensor:
    # y[..., i, :] = x[..., max(i-1, 0), :]
    return ad.crop2d(ad.pad2d(x, (1, 0, 0, 0), "replicate"), (0, 1, 0, 0))


def spatial_frequency(df: Tensor, radius: int) -> Tensor:
    """Windowed RMS of first differences of the feature vectors.

    Input [B,C,H,W]; output [B,1,H,W]. At each pixel, squared horizontal and
    vertical first differences are summed over the channel vector and over a
    (2r+1)^2 window; coordinates outside the map read the clamped edge value,
    so out-of-range horizontal differences vanish while out-of-range rows
    repeat the edge difference (and symmetrically for vertical differences).
    """
    if df.data.ndim != 4:
        raise ad.ShapeError(f"spatial_frequency expects 4-d input, got {df.data.shape}")
    if radius < 0:
        raise ValueError(f"spatial_frequency: radius must be >= 0, got {radius}")
    H, W = df.data.shape[2:]
    k = 2 * radius + 1
    if H < k or W < k:
        raise ad.ShapeError(
            f"spatial_frequency: window {k}x{k} does not fit image of {H}x{W}"
        )
    dh = ad.sub(df, _shift_right_edge(df))
    dv = ad.sub(df, _shift_down_edge(df))
    hs = ad.sum_channels(ad.square(dh))
    vs = ad.sum_channels(ad.square(dv))
    if radius > 0:
        # horizontal diffs: rows replicate, columns zero; vertical: transposed
        hs = ad.pad2d(ad.pad2d(hs, (radius, radius, 0, 0), "replicate"),
                      (0, 0, radius, radius), "zero")
        vs = ad.pad2d(ad.pad2d(vs, (0, 0, radius, radius), "replicate"),
                      (radius, radius, 0, 0), "zero")
    rf2 = ad.box_sum_valid(hs, k)
    cf2 = ad.box_sum_valid(vs, k)
    return ad.sqrt(ad.mul(ad.add(rf2, cf2), 1.0 / float(k * k)))


def window_counts(H: int, W: int, radius: int) -> np.ndarray:
    """Number of in-image pixels in each (2r+1)^2 window clipped at borders."""
    k = 2 * radius + 1
    ones = np.ones((1, 1, H, W))
    padded = np.pad(ones, [(0, 0), (0, 0), (radius, radius), (radius, radius)])
    return ad._box_sum_valid(padded, k)[0, 0]


def guided_filter(p: Tensor, guide: np.ndarray, radius: int, eps: float) -> Tensor:
    """Edge-preserving smoothing of p steered by a fixed guide image.

    p: [B,1,H,W] tensor on the tape; guide: [H,W] or [B,1,H,W] array. Window
    statistics use border-clipped boxes. Output is clamped to [0,1].
    """
    if p.data.ndim != 4 or p.data.shape[1] != 1:
        raise ad.ShapeError(f"guided_filter expects [B,1,H,W], got {p.data.shape}")
    B, _, H, W = p.data.shape
    I = np.asarray(guide, dtype=np.float64)
    if I.ndim == 2:
        I = np.broadcast_to(I[None, None], (B, 1, H, W))
    if I.shape != (B, 1, H, W):
        raise ad.ShapeError(f"guided_filter: guide shape {I.shape} does not match {p.data.shape}")
    k = 2 * radius + 1
    inv_n = np.broadcast_to(1.0 / window_counts(H, W, radius)[None, None], (B, 1, H, W))

    def box_mean_np(arr):
        padded = np.pad(arr, [(0, 0), (0, 0), (radius, radius), (radius, radius)])
        return ad._box_sum_valid(padded, k) * inv_n

    def box_mean(t: Tensor) -> Tensor:
        return ad.mul(ad.box_sum_valid(ad.pad2d(t, (radius,) * 4, "zero"), k), Tensor(inv_n))

    mean_i = box_mean_np(I)
    var_i = box_mean_np(I * I) - mean_i * mean_i
    inv_var = 1.0 / (var_i + eps)

    i_t = Tensor(I)
    mean_p = box_mean(p)
    corr_ip = box_mean(ad.mul(p, i_t))
    cov_ip = ad.sub(corr_ip, ad.mul(mean_p, Tensor(mean_i)))
    a = ad.mul(cov_ip, Tensor(inv_var))
    b = ad.sub(mean_p, ad.mul(a, Tensor(mean_i)))
    out = ad.add(ad.mul(box_mean(a), i_t), box_mean(b))
    return ad.clamp(out, 0.0, 1.0)
