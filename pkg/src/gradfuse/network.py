"""The fusion architecture: siamese densely-connected feature extraction
with channel squeeze-excitation, spatial-frequency activity measurement, a
decision path with spatial squeeze-excitation, boundary-band guided-filter
smoothing, and the pixel-wise fusion rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .filters import guided_filter, spatial_frequency

DECISION_CHANNELS = (32, 16, 8, 1)
DECISION_KERNEL = 3


@dataclass
class ExtractionConfig:
    num_layers: int = 4
    channels_per_layer: int = 16
    kernel_size: int = 3
    se_reduction: int = 4
    sf_radius: int = 5

    def __post_init__(self):
        if self.num_layers != 4:
            raise ValueError("extraction path is fixed at four layers")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.channels_per_layer < 1 or self.se_reduction < 1:
            raise ValueError("channels_per_layer and se_reduction must be positive")
        if self.sf_radius < 0:
            raise ValueError(f"sf_radius must be >= 0, got {self.sf_radius}")

    @property
    def se_width(self) -> int:
        return max(1, self.channels_per_layer // self.se_reduction)


@dataclass
class SSEConfig:
    kernel_size: int = 7

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"SSE kernel_size must be odd, got {self.kernel_size}")


@dataclass
class GuidedFilterConfig:
    radius: int = 4
    eps: float = 0.1
    threshold_low: float = 0.1
    threshold_high: float = 0.8

    def __post_init__(self):
        if self.radius < 1 or self.eps <= 0:
            raise ValueError("guided filter needs radius >= 1 and eps > 0")
        if not (0.0 <= self.threshold_low < self.threshold_high <= 1.0):
            raise ValueError(
                f"need 0 <= low < high <= 1, got ({self.threshold_low}, {self.threshold_high})"
            )


class WeightStore(dict):
    """Named map from layer identifier to parameter tensors."""

    def sorted_items(self):
        return sorted(self.items())

    def zero_grads(self):
        for t in self.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}


def expected_shapes(cfg: ExtractionConfig, sse: SSEConfig) -> dict[str, tuple[int, ...]]:
    """Shape of every parameter the architecture owns, keyed by name."""
    c = cfg.channels_per_layer
    k = cfg.kernel_size
    red = cfg.se_width
    shapes: dict[str, tuple[int, ...]] = {}
    for L in range(cfg.num_layers):
        cin = 1 + L * c
        shapes[f"enc{L}.conv.w"] = (c, cin, k, k)
        shapes[f"enc{L}.conv.b"] = (c,)
        shapes[f"enc{L}.cse.fc1.w"] = (red, c)
        shapes[f"enc{L}.cse.fc1.b"] = (red,)
        shapes[f"enc{L}.cse.fc2.w"] = (c, red)
        shapes[f"enc{L}.cse.fc2.b"] = (c,)
    dec_in = (cfg.num_layers,) + DECISION_CHANNELS[:-1]
    for i, (cin, cout) in enumerate(zip(dec_in, DECISION_CHANNELS)):
        shapes[f"dec{i}.conv.w"] = (cout, cin, DECISION_KERNEL, DECISION_KERNEL)
        shapes[f"dec{i}.conv.b"] = (cout,)
        if i < 3:
            shapes[f"dec{i}.sse.w"] = (1, cout, sse.kernel_size, sse.kernel_size)
            shapes[f"dec{i}.sse.b"] = (1,)
    return shapes


def init_weights(cfg: ExtractionConfig, sse: SSEConfig, seed: int) -> WeightStore:
    """Kaiming-uniform fan-in weights, zero biases, in deterministic order."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x1417])))
    store = WeightStore()
    for name, shape in sorted(expected_shapes(cfg, sse).items()):
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        store[name] = Tensor(data, requires_grad=True)
    return store


def infer_configs(shapes: dict[str, tuple[int, ...]]) -> tuple[ExtractionConfig, SSEConfig]:
    """Reconstruct the architecture hyperparameters a weight file implies."""
    try:
        c, _, k, _ = shapes["enc0.conv.w"]
        red = shapes["enc0.cse.fc1.w"][0]
        ks = shapes["dec0.sse.w"][2]
    except KeyError as exc:
        raise ValueError(f"weight records missing required layer {exc}") from exc
    reduction = max(1, c // red)
    return ExtractionConfig(channels_per_layer=c, kernel_size=k, se_reduction=reduction), SSEConfig(ks)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def channel_se(x: Tensor, fc1_w: Tensor, fc1_b: Tensor, fc2_w: Tensor, fc2_b: Tensor) -> Tensor:
    """Squeeze to a channel descriptor, re-excite, rescale the input."""
    v = ad.global_avg_pool(x)
    h = ad.relu(ad.dense(v, fc1_w, fc1_b))
    gate = ad.sigmoid(ad.dense(h, fc2_w, fc2_b))
    return ad.scale_channels(x, gate)


def spatial_se(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Project all channels to one map, gate every channel by it."""
    gate = ad.sigmoid(ad.conv2d(x, w, b))
    return ad.scale_spatial(x, gate)


def activity_difference(sfs_a: list[Tensor], sfs_b: list[Tensor]) -> Tensor:
    """Per-scale activity difference, concatenated over scales."""
    if len(sfs_a) != len(sfs_b):
        raise ShapeError(f"scale counts differ: {len(sfs_a)} vs {len(sfs_b)}")
    return ad.concat_channels([ad.sub(a, b) for a, b in zip(sfs_a, sfs_b)])


def boundary_region(p: np.ndarray, low: float, high: float) -> np.ndarray:
    """Uncertain band of an initial decision map: low <= p <= high, inclusive.

    Computed on raw values, outside the gradient path.
    """
    return (p >= low) & (p <= high)


def compose_final_dm(initial: Tensor, smooth: Tensor, boundary: np.ndarray) -> Tensor:
    """Smooth map on boundary pixels, initial map elsewhere.

    The selection mask is constant with respect to the parameters, so the
    gradient flows through both branches.
    """
    if boundary.shape != initial.data.shape:
        raise ShapeError(
            f"boundary shape {boundary.shape} does not match map {initial.data.shape}"
        )
    m = boundary.astype(np.float64)
    return ad.add(ad.mul(smooth, Tensor(m)), ad.mul(initial, Tensor(1.0 - m)))


def fuse(dm: Tensor, img_a: Tensor, img_b: Tensor) -> Tensor:
    """Pixel-wise convex combination: dm*A + (1-dm)*B."""
    if img_a.data.shape != img_b.data.shape or dm.data.shape != img_a.data.shape:
        raise ShapeError(
            f"fuse: shapes differ (dm {dm.data.shape}, A {img_a.data.shape}, B {img_b.data.shape})"
        )
    return ad.add(ad.mul(dm, img_a), ad.mul(ad.add(ad.neg(dm), 1.0), img_b))


def fuse_color(dm: np.ndarray, rgb_a: np.ndarray, rgb_b: np.ndarray) -> np.ndarray:
    """Apply one decision map identically to each color channel ([H,W,C])."""
    if rgb_a.shape != rgb_b.shape:
        raise ShapeError(f"fuse_color: source shapes differ: {rgb_a.shape} vs {rgb_b.shape}")
    if rgb_a.shape[:2] != dm.shape:
        raise ShapeError(f"fuse_color: map {dm.shape} does not match images {rgb_a.shape}")
    w = dm[..., None] if rgb_a.ndim == 3 else dm
    return w * rgb_a + (1.0 - w) * rgb_b


@dataclass
class CallCounters:
    extraction: int = 0
    decision: int = 0

    def reset(self):
        self.extraction = 0
        self.decision = 0


@dataclass
class PairFusion:
    """All intermediate products of one two-image fusion."""
    initial: Tensor
    boundary: np.ndarray
    smooth: Tensor
    final: Tensor
    fused: Tensor


class FusionNet:
    """Cascade of feature extraction, decision and fusion.

    Inference is read-only over the weight store; any number of concurrent
    fusions may share one instance as long as nothing mutates the weights.
    """

    def __init__(
        self,
        weights: WeightStore,
        cfg: ExtractionConfig | None = None,
        sse: SSEConfig | None = None,
        gf: GuidedFilterConfig | None = None,
    ):
        self.cfg = cfg or ExtractionConfig()
        self.sse = sse or SSEConfig()
        self.gf = gf or GuidedFilterConfig()
        self.weights = weights
        self.counters = CallCounters()
        missing = set(expected_shapes(self.cfg, self.sse)) - set(weights)
        if missing:
            raise ValueError(f"weight store is missing parameters: {sorted(missing)}")

    @classmethod
    def fresh(cls, seed: int = 0, cfg: ExtractionConfig | None = None,
              sse: SSEConfig | None = None, gf: GuidedFilterConfig | None = None) -> "FusionNet":
        cfg = cfg or ExtractionConfig()
        sse = sse or SSEConfig()
        return cls(init_weights(cfg, sse, seed), cfg, sse, gf)

    def _w(self, name: str) -> Tensor:
        return self.weights[name]

    def extract(self, img: Tensor) -> list[Tensor]:
        """Densely connected feature pyramid of a [B,1,H,W] image.

        Layer L consumes the concatenation of the image and every earlier
        layer's output; all four scales keep the input resolution.
        """
        H, W = img.data.shape[2:]
        need = 2 * self.cfg.sf_radius + 1
        if H < need or W < need:
            raise ShapeError(
                f"image {H}x{W} too small for the {need}x{need} frequency window"
            )
        self.counters.extraction += 1
        parts = [img]
        feats: list[Tensor] = []
        for L in range(self.cfg.num_layers):
            xin = parts[0] if len(parts) == 1 else ad.concat_channels(parts)
            y = ad.relu(ad.conv2d(xin, self._w(f"enc{L}.conv.w"), self._w(f"enc{L}.conv.b")))
            y = channel_se(
                y,
                self._w(f"enc{L}.cse.fc1.w"), self._w(f"enc{L}.cse.fc1.b"),
                self._w(f"enc{L}.cse.fc2.w"), self._w(f"enc{L}.cse.fc2.b"),
            )
            feats.append(y)
            parts.append(y)
        return feats

    def activity(self, pyr_a: list[Tensor], pyr_b: list[Tensor]) -> Tensor:
        r = self.cfg.sf_radius
        sfs_a = [spatial_frequency(f, r) for f in pyr_a]
        sfs_b = [spatial_frequency(f, r) for f in pyr_b]
        return activity_difference(sfs_a, sfs_b)

    def decide(self, activity: Tensor) -> Tensor:
        """Initial decision map from the 4-channel activity tensor."""
        self.counters.decision += 1
        h = activity
        for i in range(len(DECISION_CHANNELS)):
            h = ad.conv2d(h, self._w(f"dec{i}.conv.w"), self._w(f"dec{i}.conv.b"))
            if i < 3:
                h = ad.relu(h)
                h = spatial_se(h, self._w(f"dec{i}.sse.w"), self._w(f"dec{i}.sse.b"))
        return ad.sigmoid(h)

    def initial_dm(self, img_a: Tensor, img_b: Tensor) -> Tensor:
        return self.decide(self.activity(self.extract(img_a), self.extract(img_b)))

    def fuse_pair(self, img_a: Tensor, img_b: Tensor) -> PairFusion:
        """Full two-image pipeline on [B,1,H,W] grayscale tensors."""
        p0 = self.initial_dm(img_a, img_b)
        return self.finish_pair(p0, img_a, img_b)

    def finish_pair(self, p0: Tensor, img_a: Tensor, img_b: Tensor) -> PairFusion:
        """Boundary smoothing, composition and fusion of an initial map."""
        bnd = boundary_region(p0.data, self.gf.threshold_low, self.gf.threshold_high)
        guide = 0.5 * (img_a.data + img_b.data)
        ps = guided_filter(p0, guide, self.gf.radius, self.gf.eps)
        pf = compose_final_dm(p0, ps, bnd)
        fused = fuse(pf, img_a, img_b)
        return PairFusion(p0, bnd, ps, pf, fused)

    def fuse_arrays(self, a: np.ndarray, b: np.ndarray) -> PairFusion:
        """Convenience wrapper for [H,W] grayscale arrays in [0,1]."""
        if a.shape != b.shape or a.ndim != 2:
            raise ShapeError(f"need two equal [H,W] images, got {a.shape} and {b.shape}")
        ta = Tensor(a[None, None])
        tb = Tensor(b[None, None])
        return self.fuse_pair(ta, tb)
