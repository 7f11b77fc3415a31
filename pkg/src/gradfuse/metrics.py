"""Evaluation-side edge-transfer metric and diagnostic tools.

``qg_eval`` is the exact, non-smooth reference: it shares the formula
pipeline of the training loss but uses the hard min/max branch and the exact
absolute value. It is deliberately a separate implementation so the smooth
loss can be checked against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .autodiff import ShapeError, stable_sigmoid
from .losses import EDGE_EPS, HALF_PI, QgConfig, edge_weights, sobel_edges

QG_MAX = 0.98667  # sigmoid-bounded maximum of the preservation product


def _preservation_exact(ea, ef, cfg: QgConfig) -> np.ndarray:
    G = np.minimum(ea.g, ef.g) / np.maximum(np.maximum(ea.g, ef.g), EDGE_EPS)
    delta = 1.0 - np.abs(ea.alpha - ef.alpha) / HALF_PI
    q_s = cfg.gamma_g * stable_sigmoid(-cfg.k_g * (G - cfg.sigma_g))
    q_o = cfg.gamma_a * stable_sigmoid(-cfg.k_a * (delta - cfg.sigma_a))
    return q_s * q_o


def qg_eval(img_a: np.ndarray, img_b: np.ndarray, fused: np.ndarray,
            cfg: QgConfig | None = None) -> float:
    """Edge information transferred from the sources into the fused image.

    Returns the weighted mean preservation value in [0, ~0.9867]; an
    all-flat triple has zero weight everywhere and evaluates to 0.
    """
    cfg = cfg or QgConfig()
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    f = np.asarray(fused, dtype=np.float64)
    if a.shape != b.shape or a.shape != f.shape:
        raise ShapeError(f"qg_eval: shapes differ: {a.shape}, {b.shape}, {f.shape}")
    ea, eb, ef = sobel_edges(a), sobel_edges(b), sobel_edges(f)
    w_a = edge_weights(a, cfg.weight_exponent)
    w_b = edge_weights(b, cfg.weight_exponent)
    num = (_preservation_exact(ea, ef, cfg) * w_a + _preservation_exact(eb, ef, cfg) * w_b).sum()
    den = w_a.sum() + w_b.sum() + EDGE_EPS
    return float(num / den)


def blur_image(img: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur, 3-sigma truncation, replicated borders."""
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    return gaussian_filter(np.asarray(img, dtype=np.float64), sigma, mode="nearest", truncate=3.0)


def blur_sensitivity(img_a: np.ndarray, img_b: np.ndarray, fused: np.ndarray,
                     sigmas, cfg: QgConfig | None = None) -> list[tuple[float, float]]:
    """Metric value of progressively blurred fusions: [(sigma, Q)] pairs."""
    sigmas = list(sigmas)
    if not sigmas or sigmas[0] != 0 or any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError(f"sigma list must ascend from 0, got {sigmas}")
    return [(float(s), qg_eval(img_a, img_b, blur_image(fused, s), cfg)) for s in sigmas]


def difference_image(fused: np.ndarray, near_focused: np.ndarray) -> np.ndarray:
    """Min-max normalized difference; a constant difference maps to 0.5."""
    f = np.asarray(fused, dtype=np.float64)
    n = np.asarray(near_focused, dtype=np.float64)
    if f.shape != n.shape:
        raise ShapeError(f"difference_image: shapes differ: {f.shape} vs {n.shape}")
    d = f - n
    lo, hi = float(d.min()), float(d.max())
    if hi - lo < 1e-12:
        return np.full_like(d, 0.5)
    return (d - lo) / (hi - lo)


REPORT_COLUMNS = ("pair_id", "method", "Q_g", "Q_y", "Q_ncie", "Q_cb",
                  "FMI_EDGE", "FMI_DCT", "runtime_ms")


@dataclass
class MetricReport:
    """Per-pair metric rows plus the corpus mean.

    Columns for metrics defined only in external work stay empty.
    """
    rows: list[dict] = field(default_factory=list)

    def add(self, pair_id: str, method: str, q_g: float, runtime_ms: float):
        self.rows.append({"pair_id": pair_id, "method": method,
                          "Q_g": q_g, "runtime_ms": runtime_ms})

    def mean(self, method: str | None = None) -> float:
        vals = [r["Q_g"] for r in self.rows if method is None or r["method"] == method]
        return float(np.mean(vals)) if vals else float("nan")
