"""Synthetic infrared scenes (low-rank background + Gaussian point targets),
noise protocols, and loading/saving of image/mask datasets."""

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter1d


class DatasetError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    background_rank: int = 3
    background_scale: float = 0.6
    target_count: int = 2
    target_amplitude_range: tuple = (0.25, 0.4)
    target_sigma_range: tuple = (0.85, 1.6)
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["target_amplitude_range"] = list(self.target_amplitude_range)
        d["target_sigma_range"] = list(self.target_sigma_range)
        return d


@dataclass(frozen=True)
class NoiseSpec:
    """``gaussian_variance`` is on the 0-255 intensity scale."""

    kind: str = "gaussian"
    gaussian_variance: float = 0.0
    salt_prob: float = 0.0
    pepper_prob: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "salt_pepper"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.gaussian_variance < 0:
            raise ValueError("gaussian_variance must be non-negative")
        for p in (self.salt_prob, self.pepper_prob):
            if not 0 <= p <= 1:
                raise ValueError(f"probabilities must lie in [0, 1], got {p}")
        if self.salt_prob + self.pepper_prob > 1:
            raise ValueError("salt_prob + pepper_prob must not exceed 1")


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)


def _rng(seed, stream):
    return np.random.default_rng([seed, stream])


def _smooth_profile(rng, length):
    # positive, slowly varying 1-D profile
    z = gaussian_filter1d(rng.standard_normal(length), sigma=max(length / 10, 1.0), mode="reflect")
    z /= z.std() + 1e-12
    return np.exp(0.5 * z)


def gen_background(config):
    """Sum of ``background_rank`` outer products of smooth positive profiles,
    scaled so the maximum equals ``background_scale``.  Rank <= r exactly."""
    h, w, r = config.height, config.width, config.background_rank
    if not 1 <= r <= min(h, w):
        raise ValueError(f"background_rank must lie in [1, {min(h, w)}], got {r}")
    rng = _rng(config.seed, 0)
    B = np.zeros((h, w))
    for _ in range(r):
        B += rng.uniform(0.3, 1.0) * np.outer(_smooth_profile(rng, h), _smooth_profile(rng, w))
    return B * (config.background_scale / B.max())


def _spot(h, w, cy, cx, sigma):
    yy = np.arange(h)[:, None] - cy
    xx = np.arange(w)[None, :] - cx
    return np.exp(-(yy ** 2 + xx ** 2) / (2 * sigma ** 2))


def gen_targets(base, config, max_tries=1000):
    """Add ``target_count`` isotropic Gaussian spots at non-overlapping spots.

    The mask marks pixels where a spot exceeds half of its own amplitude.
    Returns ``(image, mask, target_layer)``; the image is clamped to [0, 1].
    """
    h, w = base.shape
    rng = _rng(config.seed, 1)
    layer = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=np.uint8)
    placed = []  # (cy, cx, footprint radius)
    a_lo, a_hi = config.target_amplitude_range
    s_lo, s_hi = config.target_sigma_range
    for _ in range(config.target_count):
        amp = rng.uniform(a_lo, a_hi)
        sigma = rng.uniform(s_lo, s_hi)
        radius = 3.0 * sigma
        for _ in range(max_tries):
            cy = rng.uniform(radius, h - 1 - radius)
            cx = rng.uniform(radius, w - 1 - radius)
            if all(np.hypot(cy - py, cx - px) > radius + pr + 1 for py, px, pr in placed):
                break
        else:
            raise PlacementError(f"could not place {config.target_count} targets without overlap")
        placed.append((cy, cx, radius))
        g = _spot(h, w, cy, cx, sigma)
        layer += amp * g
        if amp > 0:
            mask |= (g > 0.5).astype(np.uint8)
    image = np.clip(base + layer, 0.0, 1.0)
    return image, mask, layer


def make_scene(config):
    base = gen_background(config)
    image, mask, _ = gen_targets(base, config)
    return Sample(image.astype(np.float32), mask, {"source": "synthetic", **config.to_dict()})


def add_noise(image, spec, seed=0):
    if np.any(image < 0) or np.any(image > 1):
        raise ValueError("image must lie in [0, 1]")
    rng = _rng(seed, 2)
    if spec.kind == "gaussian":
        if spec.gaussian_variance == 0:
            return image.copy()
        std = np.sqrt(spec.gaussian_variance) / 255.0
        noisy = image + rng.normal(0.0, std, size=image.shape)
        return np.clip(noisy, 0.0, 1.0).astype(image.dtype)
    out = image.copy()
    if spec.salt_prob == 0 and spec.pepper_prob == 0:
        return out
    u = rng.random(image.shape)
    out[u < spec.salt_prob] = 1
    out[(u >= spec.salt_prob) & (u < spec.salt_prob + spec.pepper_prob)] = 0
    return out


def synthetic_dataset(n, base, seed=0, target_count_range=(1, 3)):
    """``n`` scenes with per-scene seeds and target counts derived from ``seed``."""
    rng = _rng(seed, 3)
    lo, hi = target_count_range
    counts = rng.integers(lo, hi + 1, size=n)
    seeds = rng.integers(0, 2 ** 31 - 1, size=n)
    return [make_scene(replace(base, seed=int(s), target_count=int(c)))
            for s, c in zip(seeds, counts)]


def split(samples, seed=0, train_fraction=0.8):
    """Deterministic shuffled train/validation split."""
    order = _rng(seed, 4).permutation(len(samples))
    cut = int(round(train_fraction * len(samples)))
    return [samples[i] for i in order[:cut]], [samples[i] for i in order[cut:]]


# -- files ---------------------------------------------------------------------

def read_gray(path):
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I;16B", "I;16L"):
            scale = 255.0 if im.mode == "L" else 65535.0
            arr = np.asarray(im).astype(np.float64)
        elif im.mode == "I":
            arr = np.asarray(im).astype(np.float64)
            scale = 65535.0 if arr.max() > 255 else 255.0
        else:
            raise DatasetError(f"{path}: expected a grayscale image, got mode {im.mode}")
    return arr / scale


def load_dataset(root):
    """Read ``root/images/*.png`` with masks of the same name in ``root/masks``."""
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"{root}: expected images/ and masks/ subdirectories")
    images = {p.name for p in img_dir.glob("*.png")}
    masks = {p.name for p in mask_dir.glob("*.png")}
    for name in sorted(images ^ masks):
        side = "mask" if name in images else "image"
        raise DatasetError(f"missing {side} for {name}")
    samples = []
    for name in sorted(images):
        img = read_gray(img_dir / name)
        mask = read_gray(mask_dir / name)
        if img.shape != mask.shape:
            raise DatasetError(f"{name}: image {img.shape} and mask {mask.shape} differ")
        samples.append(Sample(img.astype(np.float32), (mask > 127 / 255).astype(np.uint8),
                              {"source": "file", "image": str(img_dir / name),
                               "mask": str(mask_dir / name)}))
    return samples


def save_dataset(samples, root):
    """Write samples as 16-bit images and 8-bit 0/255 masks."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(samples))))
    for i, s in enumerate(samples):
        name = f"{i:0{width}d}.png"
        img16 = np.round(np.clip(s.image, 0, 1) * 65535).astype(np.uint16)
        Image.fromarray(img16).save(root / "images" / name)
        Image.fromarray((s.mask > 0).astype(np.uint8) * 255).save(root / "masks" / name)
