"""Training objective: Dice loss on the decision map plus a differentiable
edge-preservation loss between the source images and the fused output.

The edge term rewrites the classical gradient-transfer fusion metric with a
steep logistic in place of the Heaviside branch so it can be backpropagated.
Flat regions are handled by epsilon guards: every strength used in a ratio
is sqrt(sx^2 + sy^2 + 1e-10), while the pixel weights use the exact
strengths so that an all-flat triple degenerates to a loss of exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, stable_sigmoid
from .reference import SOBEL_X, SOBEL_Y

EDGE_EPS = 1e-10
HALF_PI = np.pi / 2.0


@dataclass
class QgConfig:
    gamma_g: float = 1.0
    k_g: float = -10.0
    sigma_g: float = 0.5
    gamma_a: float = 1.0
    k_a: float = -20.0
    sigma_a: float = 0.75
    weight_exponent: float = 1.0
    k: float = 1000.0
    orientation_mode: str = "abs"

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError(f"steepness k must be positive, got {self.k}")
        if self.gamma_g <= 0 or self.gamma_a <= 0:
            raise ValueError("preservation amplitudes must be positive")
        if self.orientation_mode not in ("abs", "smooth"):
            raise ValueError(f"orientation_mode must be 'abs' or 'smooth', got {self.orientation_mode!r}")


@dataclass
class LossConfig:
    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"balance weight must be >= 0, got {self.lam}")


@dataclass
class EdgeField:
    """Per-pixel edge strength and orientation of one image."""
    g: np.ndarray
    alpha: np.ndarray


# ---------------------------------------------------------------------------
# array-side pieces (sources are constants; no gradients flow through them)
# ---------------------------------------------------------------------------

def sobel_responses(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 sobel responses with edge replication, on the trailing two axes.

    Positive and negative taps are summed separately and subtracted, so a
    constant image yields responses of exactly zero.
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[-2:]
    width = [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(img, width, mode="edge")

    def win(di, dj):
        return p[..., di:di + H, dj:dj + W]

    sx = (win(0, 2) + 2.0 * win(1, 2) + win(2, 2)) - (win(0, 0) + 2.0 * win(1, 0) + win(2, 0))
    sy = (win(2, 0) + 2.0 * win(2, 1) + win(2, 2)) - (win(0, 0) + 2.0 * win(0, 1) + win(0, 2))
    return sx, sy


def sobel_edges(img: np.ndarray) -> EdgeField:
    """Edge strength and orientation; the strength carries a 1e-10 additive
    guard inside the square root so it stays differentiable on flat areas."""
    sx, sy = sobel_responses(img)
    g = np.sqrt(sx * sx + sy * sy + EDGE_EPS)
    alpha = np.arctan((sy * sy) / (sx * sx + EDGE_EPS))
    return EdgeField(g=g, alpha=alpha)


def edge_weights(img: np.ndarray, exponent: float = 1.0) -> np.ndarray:
    """Pixel weights from the exact (unguarded) edge strength."""
    sx, sy = sobel_responses(img)
    g = np.sqrt(sx * sx + sy * sy)
    return g if exponent == 1.0 else g ** exponent


def smooth_heaviside(x, y, k: float):
    """Steep logistic step 1/(1 + exp(-k(x-y))); accepts arrays or tensors.

    The implementation satisfies f(x,y,k) + f(y,x,k) == 1 exactly.
    """
    if isinstance(x, Tensor) or isinstance(y, Tensor):
        xt = x if isinstance(x, Tensor) else Tensor(np.broadcast_to(np.asarray(x, float), y.data.shape))
        yt = y if isinstance(y, Tensor) else Tensor(np.broadcast_to(np.asarray(y, float), x.data.shape))
        return ad.sigmoid(ad.mul(ad.sub(xt, yt), k))
    return stable_sigmoid(k * (np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)))


def relative_strength(g_a: np.ndarray, g_f: np.ndarray, k: float) -> np.ndarray:
    """Smooth min/max strength ratio: the logistic picks the branch."""
    g_a = np.asarray(g_a, dtype=np.float64)
    g_f = np.asarray(g_f, dtype=np.float64)
    f = smooth_heaviside(g_f, g_a, k)
    den_f = np.maximum(g_f, EDGE_EPS)
    den_a = np.maximum(g_a, EDGE_EPS)
    return f * (g_a / den_f) + (1.0 - f) * (g_f / den_a)


def orientation_preservation(alpha_a: np.ndarray, alpha_f: np.ndarray, cfg: QgConfig) -> np.ndarray:
    """Orientation agreement in [0,1]; 'abs' uses the absolute difference,
    'smooth' replaces it with d*(2*f(d)-1)."""
    d = np.asarray(alpha_a, dtype=np.float64) - np.asarray(alpha_f, dtype=np.float64)
    if cfg.orientation_mode == "abs":
        mag = np.abs(d)
    else:
        mag = d * (2.0 * smooth_heaviside(d, 0.0, cfg.k) - 1.0)
    return 1.0 - mag / HALF_PI


def preservation_values(G: np.ndarray, delta: np.ndarray, cfg: QgConfig):
    """Strength / orientation preservation sigmoids and their product."""
    q_s = cfg.gamma_g * stable_sigmoid(-cfg.k_g * (np.asarray(G, float) - cfg.sigma_g))
    q_o = cfg.gamma_a * stable_sigmoid(-cfg.k_a * (np.asarray(delta, float) - cfg.sigma_a))
    return q_s, q_o, q_s * q_o


# ---------------------------------------------------------------------------
# tape-side loss terms
# ---------------------------------------------------------------------------

def dice_loss(p: Tensor, g: np.ndarray) -> Tensor:
    """1 - (2*sum(p*g) + 1) / (sum(p^2) + sum(g^2) + 1) for a binary target g."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != p.data.shape:
        raise ShapeError(f"dice_loss: map {p.data.shape} vs target {g.shape}")
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ValueError("dice_loss: ground-truth mask must be binary")
    num = ad.add(ad.mul(ad.sum_all(ad.mul(p, Tensor(g))), 2.0), 1.0)
    den = ad.add(ad.sum_all(ad.square(p)), float(g.sum() + 1.0))
    return ad.add(ad.neg(ad.div(num, den)), 1.0)


def _sobel_t(img: Tensor) -> tuple[Tensor, Tensor]:
    kx = Tensor(SOBEL_X[None, None])
    ky = Tensor(SOBEL_Y[None, None])
    zero = Tensor(np.zeros(1))
    padded = ad.pad2d(img, (1, 1, 1, 1), "replicate")
    sx = ad.crop2d(ad.conv2d(padded, kx, zero), (1, 1, 1, 1))
    sy = ad.crop2d(ad.conv2d(padded, ky, zero), (1, 1, 1, 1))
    return sx, sy


def _edges_t(img: Tensor) -> tuple[Tensor, Tensor]:
    sx, sy = _sobel_t(img)
    sx2 = ad.square(sx)
    sy2 = ad.square(sy)
    g = ad.sqrt(ad.add(ad.add(sx2, sy2), EDGE_EPS))
    alpha = ad.arctan(ad.div(sy2, ad.add(sx2, EDGE_EPS)))
    return g, alpha


def _preservation_t(g_src: np.ndarray, a_src: np.ndarray, g_f: Tensor, a_f: Tensor,
                    cfg: QgConfig) -> Tensor:
    src_g = Tensor(g_src)
    f = ad.sigmoid(ad.mul(ad.sub(g_f, src_g), cfg.k))
    ratio_af = ad.div(src_g, g_f)                     # source over fused
    ratio_fa = ad.div(g_f, Tensor(np.maximum(g_src, EDGE_EPS)))
    G = ad.add(ad.mul(f, ratio_af), ad.mul(ad.add(ad.neg(f), 1.0), ratio_fa))

    d = ad.sub(Tensor(a_src), a_f)
    if cfg.orientation_mode == "abs":
        mag = ad.absolute(d)
    else:
        fo = ad.sigmoid(ad.mul(d, cfg.k))
        mag = ad.mul(d, ad.sub(ad.mul(fo, 2.0), 1.0))
    delta = ad.add(ad.neg(ad.mul(mag, 1.0 / HALF_PI)), 1.0)

    q_s = ad.mul(ad.sigmoid(ad.mul(ad.sub(G, cfg.sigma_g), -cfg.k_g)), cfg.gamma_g)
    q_o = ad.mul(ad.sigmoid(ad.mul(ad.sub(delta, cfg.sigma_a), -cfg.k_a)), cfg.gamma_a)
    return ad.mul(q_s, q_o)


def _lift(img: np.ndarray, like: tuple[int, ...]) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None, None]
    if img.shape != like:
        raise ShapeError(f"qg_loss: source shape {img.shape} does not match fused {like}")
    return img


def qg_loss(img_a: np.ndarray, img_b: np.ndarray, fused: Tensor, cfg: QgConfig | None = None) -> Tensor:
    """Differentiable edge-transfer loss 1 - Q between sources and fusion.

    The sources are constants; gradients flow only through the fused tensor.
    When both sources are flat every pixel weight is zero and the loss is
    exactly 1 by the guarded normalization.
    """
    cfg = cfg or QgConfig()
    if fused.data.ndim != 4:
        raise ShapeError(f"qg_loss: fused must be [B,1,H,W], got {fused.data.shape}")
    a = _lift(img_a, fused.data.shape)
    b = _lift(img_b, fused.data.shape)

    ea = sobel_edges(a)
    eb = sobel_edges(b)
    w_a = edge_weights(a, cfg.weight_exponent)
    w_b = edge_weights(b, cfg.weight_exponent)

    g_f, a_f = _edges_t(fused)
    q_af = _preservation_t(ea.g, ea.alpha, g_f, a_f, cfg)
    q_bf = _preservation_t(eb.g, eb.alpha, g_f, a_f, cfg)

    num = ad.sum_all(ad.add(ad.mul(q_af, Tensor(w_a)), ad.mul(q_bf, Tensor(w_b))))
    den = float(w_a.sum() + w_b.sum()) + EDGE_EPS
    return ad.add(ad.neg(ad.mul(num, 1.0 / den)), 1.0)


def total_loss(dice: Tensor, qg: Tensor, lam: float = 1.0) -> Tensor:
    if lam < 0:
        raise ValueError(f"balance weight must be >= 0, got {lam}")
    if lam == 0.0:
        return dice
    return ad.add(dice, ad.mul(qg, lam))
