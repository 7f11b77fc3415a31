"""Synthesize multi-focus training pairs from (image, mask) inputs.

A pair is made by blurring the background of an all-sharp image to get the
near-focused source and blurring the foreground to get the far-focused one.
Blending uses a softened mask (sigma/2) so no hard seam appears at the focus
boundary; the stored ground truth mask stays binary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError
from .imgio import load_image, save_image


@dataclass
class AugmentConfig:
    crop: int | None = 128
    offset_px: int = 2
    noise_sigma: float = 0.01
    blur_prob: float = 0.5
    blur_sigma_max: float = 0.75


@dataclass
class GenConfig:
    blur_sigma_lo: float = 1.0
    blur_sigma_hi: float = 4.0
    min_fg_fraction: float = 0.08
    max_fg_fraction: float = 0.65
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not (0.0 < self.min_fg_fraction < self.max_fg_fraction < 1.0):
            raise ValueError(
                f"need 0 < min < max < 1 for foreground fractions, "
                f"got ({self.min_fg_fraction}, {self.max_fg_fraction})"
            )


@dataclass
class TrainingSample:
    near_focused: np.ndarray   # background blurred; sharp where gt_mask == 1
    far_focused: np.ndarray    # foreground blurred
    gt_mask: np.ndarray        # binary, 1 where the near-focused source is sharp
    gt_fused: np.ndarray       # the original all-sharp image


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.copy()
    if img.ndim == 3:
        return gaussian_filter(img, (sigma, sigma, 0), mode="nearest", truncate=3.0)
    return gaussian_filter(img, sigma, mode="nearest", truncate=3.0)


def generate_pair(image: np.ndarray, mask: np.ndarray, sigma: float) -> TrainingSample:
    """Build one multi-focus pair by selective blurring with strength sigma."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != image.shape[:2]:
        raise DataError(f"mask shape {mask.shape} does not match image {image.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise DataError("mask must be binary")
    if mask.sum() == 0:
        raise DataError("mask is empty")
    blurred = _blur(image, sigma)
    soft = _blur(mask, sigma / 2.0) if sigma > 0 else mask.copy()
    if image.ndim == 3:
        soft_b = soft[:, :, None]
    else:
        soft_b = soft
    near = image * soft_b + blurred * (1.0 - soft_b)
    far = blurred * soft_b + image * (1.0 - soft_b)
    return TrainingSample(near_focused=near, far_focused=far,
                          gt_mask=mask.copy(), gt_fused=image.copy())


def filter_by_foreground(mask: np.ndarray, cfg: GenConfig) -> bool:
    """Accept masks whose foreground fraction is inside the configured band."""
    frac = float(np.asarray(mask, dtype=np.float64).mean())
    return cfg.min_fg_fraction <= frac <= cfg.max_fg_fraction


def augment(sample: TrainingSample, cfg: AugmentConfig, rng_seed) -> TrainingSample:
    """Seeded crop / blur / offset / noise pipeline.

    The crop window of the two sources is jittered independently by up to
    offset_px pixels (offsets need a crop); mask and fused target use the
    base window. With everything disabled the sample is returned unchanged.
    """
    seed = rng_seed if isinstance(rng_seed, (list, tuple)) else [int(rng_seed)]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    near, far = sample.near_focused, sample.far_focused
    mask, fused = sample.gt_mask, sample.gt_fused
    H, W = mask.shape

    if cfg.crop is not None:
        c = int(cfg.crop)
        if c > H or c > W:
            raise DataError(f"crop {c} exceeds sample size {H}x{W}")
        oy = int(rng.integers(0, H - c + 1))
        ox = int(rng.integers(0, W - c + 1))
        off = cfg.offset_px

        def jitter(o, limit):
            if off <= 0:
                return o
            return int(np.clip(o + rng.integers(-off, off + 1), 0, limit))

        ny, nx = jitter(oy, H - c), jitter(ox, W - c)
        fy, fx = jitter(oy, H - c), jitter(ox, W - c)
        near = near[ny:ny + c, nx:nx + c]
        far = far[fy:fy + c, fx:fx + c]
        mask = mask[oy:oy + c, ox:ox + c]
        fused = fused[oy:oy + c, ox:ox + c]
    else:
        near, far = near.copy(), far.copy()
        mask, fused = mask.copy(), fused.copy()

    if cfg.blur_prob > 0 and rng.random() < cfg.blur_prob:
        extra = rng.uniform(0.0, cfg.blur_sigma_max)
        near = _blur(near, extra)
        far = _blur(far, extra)

    if cfg.noise_sigma > 0:
        near = np.clip(near + rng.normal(0.0, cfg.noise_sigma, near.shape), 0.0, 1.0)
        far = np.clip(far + rng.normal(0.0, cfg.noise_sigma, far.shape), 0.0, 1.0)

    return TrainingSample(near_focused=near, far_focused=far, gt_mask=mask, gt_fused=fused)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    sample_id: str
    near_path: str
    far_path: str
    mask_path: str
    fused_path: str
    sigma: float


def write_manifest(entries: list[ManifestEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for e in entries:
            w.writerow([e.sample_id, e.near_path, e.far_path,
                        e.mask_path, e.fused_path, repr(e.sigma)])


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise DataError(f"{path}: line {lineno}: expected 6 fields, got {len(parts)}")
            try:
                sigma = float(parts[5])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: bad sigma {parts[5]!r}") from exc
            entries.append(ManifestEntry(parts[0], parts[1], parts[2], parts[3], parts[4], sigma))
    return entries


def generate_dataset(images_dir, masks_dir, out_dir, cfg: GenConfig, seed: int):
    """Pair corpus images with masks by file stem, filter, blur and save.

    Returns (entries, accepted, rejected). Every sample draws its own RNG
    stream from (seed, index), so generation order does not matter.
    """
    images_dir, masks_dir, out_dir = Path(images_dir), Path(masks_dir), Path(out_dir)
    imgs = {p.stem: p for p in sorted(images_dir.glob("*")) if p.suffix.lower() in (".png", ".pgm")}
    masks = {p.stem: p for p in sorted(masks_dir.glob("*")) if p.suffix.lower() in (".png", ".pgm")}
    stems = sorted(set(imgs) & set(masks))
    if not stems:
        raise DataError(f"no (image, mask) pairs shared between {images_dir} and {masks_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    rejected = 0
    for idx, stem in enumerate(stems):
        image = load_image(imgs[stem])
        mask = np.round(to_binary(load_image(masks[stem])))
        if not filter_by_foreground(mask, cfg):
            rejected += 1
            continue
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, idx])))
        sigma = float(rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi))
        sample = generate_pair(image, mask, sigma)
        names = {}
        for kind, arr in (("near", sample.near_focused), ("far", sample.far_focused),
                          ("mask", sample.gt_mask), ("fused", sample.gt_fused)):
            fname = f"{stem}_{kind}.png"
            save_image(out_dir / fname, arr)
            names[kind] = fname
        entries.append(ManifestEntry(stem, names["near"], names["far"],
                                     names["mask"], names["fused"], sigma))
    write_manifest(entries, out_dir / "manifest.tsv")
    return entries, len(entries), rejected


def to_binary(mask_img: np.ndarray) -> np.ndarray:
    """Collapse a loaded mask image to a {0,1} float map."""
    m = mask_img
    if m.ndim == 3:
        m = m.mean(axis=2)
    return (m >= 0.5).astype(np.float64)


def resolve_sample_paths(entry: ManifestEntry, manifest_path) -> dict[str, Path]:
    base = Path(manifest_path).parent
    return {
        "near": base / entry.near_path,
        "far": base / entry.far_path,
        "mask": base / entry.mask_path,
        "fused": base / entry.fused_path,
    }


# ---------------------------------------------------------------------------
# self-contained demo corpus
# ---------------------------------------------------------------------------

def synthesize_corpus(out_dir, count: int, size: int = 256, seed: int = 0):
    """Write a textured demo corpus: images/ and masks/ with matching stems.

    Each image mixes two band-limited noise textures across an elliptical
    foreground plus a few hard-edged patches, so there is gradient content
    everywhere and a plausible object boundary.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    mask_dir = out_dir / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for idx in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC0, idx])))
        img = _texture(rng, size)
        fg = _texture(rng, size)
        mask = _ellipse_mask(rng, size)
        img = img * (1.0 - mask) + fg * mask
        stem = f"sample_{idx:04d}"
        save_image(img_dir / f"{stem}.png", img)
        save_image(mask_dir / f"{stem}.png", mask)
    return img_dir, mask_dir


def _texture(rng, size: int) -> np.ndarray:
    base = gaussian_filter(rng.random((size, size)), rng.uniform(0.8, 2.5), mode="wrap")
    lo, hi = base.min(), base.max()
    base = (base - lo) / max(hi - lo, 1e-9)
    for _ in range(int(rng.integers(2, 6))):
        h = int(rng.integers(size // 10, size // 3))
        w = int(rng.integers(size // 10, size // 3))
        y = int(rng.integers(0, size - h))
        x = int(rng.integers(0, size - w))
        patch = rng.uniform(0.0, 1.0)
        alpha = rng.uniform(0.35, 0.8)
        base[y:y + h, x:x + w] = alpha * patch + (1 - alpha) * base[y:y + h, x:x + w]
    return np.clip(0.05 + 0.9 * base, 0.0, 1.0)


def _ellipse_mask(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(64):
        cy = rng.uniform(0.3, 0.7) * size
        cx = rng.uniform(0.3, 0.7) * size
        ry = rng.uniform(0.12, 0.42) * size
        rx = rng.uniform(0.12, 0.42) * size
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dy * np.cos(theta) + dx * np.sin(theta)
        v = -dy * np.sin(theta) + dx * np.cos(theta)
        mask = ((u / ry) ** 2 + (v / rx) ** 2 <= 1.0).astype(np.float64)
        if 0.10 <= mask.mean() <= 0.60:
            return mask
    return mask
