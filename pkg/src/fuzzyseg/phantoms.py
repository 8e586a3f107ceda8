"""Synthetic brain-slice phantoms: deformed concentric rings on a dark field.

Each phantom is a set of nested regions (background, an outer fluid ring, a
mid ring, and a bright core) whose boundaries are sinusoidally deformed
circles.  The label map comes from geometry alone; intensity corruption
(Gaussian blur, then additive noise) draws from a separate stream, so two
datasets generated with the same seed but different blur or noise levels
share identical label maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericFailureError

# brain-like ordering: dark background, dim fluid ring, mid ring, bright core
CLASS_MEANS_4 = (0.05, 0.35, 0.65, 0.9)
CLASS_NAMES_4 = ("background", "csf", "gray_matter", "white_matter")


@dataclass
class PhantomConfig:
    size: int = 32
    num_classes: int = 4
    blur_sigma: float = 1.0
    noise_sigma: float = 0.03
    max_retries: int = 25

    def validate(self) -> None:
        if self.size < 8:
            raise InvalidInputError(f"size must be >= 8, got {self.size}")
        if not 2 <= self.num_classes <= 4:
            raise InvalidInputError(f"num_classes must be in [2, 4], got {self.num_classes}")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise InvalidInputError("blur_sigma and noise_sigma must be >= 0")

    def class_means(self) -> np.ndarray:
        if self.num_classes == 4:
            return np.array(CLASS_MEANS_4)
        return np.linspace(0.05, 0.9, self.num_classes)


@dataclass
class LabeledImage:
    image: np.ndarray  # (H, W) float64 in [0, 1]
    labels: np.ndarray  # (H, W) int64 class indices
    seed: int


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with reflect padding, radius 3 sigma."""
    if sigma <= 0:
        return np.asarray(image, dtype=np.float64).copy()
    radius = max(1, int(np.ceil(3.0 * sigma)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    out = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)],
                        mode="reflect")
        windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=axis)
        out = windows @ kernel
    return out


def _draw_labels(config: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """One geometry draw: ring labels, innermost region = highest class.

    Base radii enclose equal areas so every class keeps a similar pixel
    share; a lopsided histogram would let intensity-quantile cluster seeding
    drop two centroids into one mode.
    """
    n = config.size
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cx, cy = rng.uniform(-0.08, 0.08, size=2)
    radius = np.hypot(xx - cx, yy - cy)
    theta = np.arctan2(yy - cy, xx - cx)
    c = config.num_classes
    enclosed = np.arange(c - 1, 0, -1) / c  # outermost boundary first
    base = 2.0 * np.sqrt(enclosed / np.pi) * 0.96
    base = base + rng.uniform(-0.03, 0.03, size=c - 1)
    labels = np.zeros((n, n), dtype=np.int64)
    for k, r in enumerate(base):
        amp = rng.uniform(0.03, 0.10)
        freq = int(rng.integers(2, 6))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        boundary = r * (1.0 + amp * np.sin(freq * theta + phase))
        labels[radius < boundary] = k + 1
    return labels


def generate_phantom(config: PhantomConfig, seed: int) -> LabeledImage:
    """One labeled phantom; retries geometry until every class appears."""
    config.validate()
    geo_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    geo_rng = np.random.default_rng(geo_ss)
    labels = None
    for _ in range(config.max_retries):
        candidate = _draw_labels(config, geo_rng)
        if len(np.unique(candidate)) == config.num_classes:
            labels = candidate
            break
    if labels is None:
        raise NumericFailureError(
            f"seed {seed}: no geometry with all {config.num_classes} classes "
            f"after {config.max_retries} attempts"
        )
    image = config.class_means()[labels]
    image = gaussian_blur(image, config.blur_sigma)
    if config.noise_sigma > 0:
        noise_rng = np.random.default_rng(noise_ss)
        image = image + noise_rng.normal(0.0, config.noise_sigma, size=image.shape)
    return LabeledImage(image=np.clip(image, 0.0, 1.0), labels=labels, seed=seed)


def generate_batch(config: PhantomConfig, count: int, seed: int):
    """``count`` phantoms with per-image seeds drawn from one root stream.

    Image i gets the same per-image seed regardless of ``count``, so growing
    a dataset keeps its existing members bit-identical.
    """
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    root = np.random.default_rng(seed)
    image_seeds = [int(s) for s in root.integers(0, 2 ** 62, size=count)]
    return [generate_phantom(config, s) for s in image_seeds]
