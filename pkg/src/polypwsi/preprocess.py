"""Size conformance, normalization and training-time augmentation.

Conventions: raster images are ``(H, W, 3) uint8``; tensors are ``float64`` of
the same layout. Color PCA and jitter work on intensities rescaled to [0, 1];
normalization statistics are in raw 0-255 intensity units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import kernels
from .core import RandomStream
from .errors import EmptyDataset, InsufficientData, RangeError
from .tiler import median_dimensions

STD_EPS = 1e-6


@dataclass(frozen=True)
class ConformTarget:
    target_width: int
    target_height: int

    def __post_init__(self):
        if self.target_width < 1 or self.target_height < 1:
            raise RangeError("conform target dimensions must be >= 1")


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def safe_std(self) -> np.ndarray:
        return np.maximum(np.asarray(self.std, dtype=np.float64), STD_EPS)


@dataclass(frozen=True)
class ColorPCA:
    eigenvalues: np.ndarray  # (3,), descending
    eigenvectors: np.ndarray  # (3, 3), columns are principal directions

    def offset(self, alphas) -> np.ndarray:
        return self.eigenvectors @ (np.asarray(alphas) * self.eigenvalues)


@dataclass(frozen=True)
class AugmentConfig:
    jitter_sigma: float = 0.1
    flip_probability: float = 0.5
    rotation_mode: Literal["random_quarter", "half_turn", "all_four", "none"] = "random_quarter"
    fixed_rotation: int | None = field(default=None)

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise RangeError("jitter_sigma must be >= 0")
        if not 0 <= self.flip_probability <= 1:
            raise RangeError("flip_probability must lie in [0, 1]")
        if self.rotation_mode not in ("random_quarter", "half_turn", "all_four", "none"):
            raise RangeError(f"unknown rotation_mode {self.rotation_mode!r}")


# -- conformance --------------------------------------------------------------


def compute_conform_target(dims, subset_fraction: float = 0.15, rng: RandomStream | None = None) -> ConformTarget:
    rng = rng if rng is not None else RandomStream(0)
    w, h = median_dimensions(dims, subset_fraction, rng)
    return ConformTarget(w, h)


def resize(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resample (half-pixel centers); returns the input dtype."""
    src = np.ascontiguousarray(image, dtype=np.float64)
    out = kernels.resize_bilinear(src, height, width)
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def conform_size(image: np.ndarray, target: ConformTarget) -> np.ndarray:
    """Fit ``image`` into the target frame: shrink if needed, then zero-pad.

    Oversized images are scaled by one factor on both axes so the aspect ratio
    is kept; the result sits at the top-left of a black canvas.
    """
    height, width = image.shape[:2]
    tw, th = target.target_width, target.target_height
    if width > tw or height > th:
        scale = min(tw / width, th / height)
        new_w = min(tw, max(1, round(width * scale)))
        new_h = min(th, max(1, round(height * scale)))
        image = resize(image, new_w, new_h)
        height, width = new_h, new_w
    if (width, height) == (tw, th):
        return image.copy()
    canvas = np.zeros((th, tw) + image.shape[2:], dtype=image.dtype)
    canvas[:height, :width] = image
    return canvas


# -- normalization -----------------------------------------------------------


def compute_stats(images) -> NormalizationStats:
    """Per-channel mean and population std over every pixel of every image."""
    total = 0
    s = np.zeros(3)
    for img in images:
        px = np.asarray(img, dtype=np.float64).reshape(-1, 3)
        total += px.shape[0]
        s += px.sum(axis=0)
    if total == 0:
        raise EmptyDataset("no images to compute statistics from")
    mean = s / total
    # Second pass keeps the variance free of cancellation.
    ss = np.zeros(3)
    for img in images:
        px = np.asarray(img, dtype=np.float64).reshape(-1, 3)
        ss += ((px - mean) ** 2).sum(axis=0)
    std = np.sqrt(ss / total)
    return NormalizationStats(tuple(mean.tolist()), tuple(std.tolist()))


def normalize(image, stats: NormalizationStats) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    return (x - np.asarray(stats.mean)) / stats.safe_std()


def denormalize(tensor, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(tensor, dtype=np.float64) * stats.safe_std() + np.asarray(stats.mean)


# -- color PCA / jitter ------------------------------------------------------


def fit_color_pca(images) -> ColorPCA:
    """PCA of the RGB covariance of all pixels (intensities scaled to [0, 1])."""
    pixels = [np.asarray(img, dtype=np.float64).reshape(-1, 3) for img in images]
    px = np.concatenate(pixels) / 255.0 if pixels else np.empty((0, 3))
    if px.shape[0] < 2:
        raise InsufficientData(f"color PCA needs at least 2 pixels, got {px.shape[0]}")
    cov = np.cov(px, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    return ColorPCA(evals, evecs)


def pixel_covariance(images) -> np.ndarray:
    px = np.concatenate([np.asarray(i, dtype=np.float64).reshape(-1, 3) for i in images]) / 255.0
    return np.cov(px, rowvar=False, bias=True)


def jitter(image, pca: ColorPCA, rng: RandomStream, sigma: float = 0.1) -> np.ndarray:
    """Add one PCA-directed color offset to every pixel.

    ``image`` must be in the same units the PCA was fitted in ([0, 1]).
    """
    x = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    alphas = rng.normal(0.0, sigma, size=3)
    return x + pca.offset(alphas)


# -- geometric -----------------------------------------------------------------


def rotate90(image: np.ndarray, k: int) -> np.ndarray:
    """Counter-clockwise quarter turns."""
    if k not in (0, 1, 2, 3):
        raise RangeError(f"rotation count must be in 0..3, got {k}")
    return np.ascontiguousarray(np.rot90(image, k, axes=(0, 1)))


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def augment(image, pca: ColorPCA, config: AugmentConfig, rng: RandomStream) -> np.ndarray:
    """Jitter, quarter-turn, then maybe flip; every draw comes from ``rng``."""
    out = jitter(image, pca, rng, config.jitter_sigma)
    if config.fixed_rotation is not None:
        k = config.fixed_rotation
    elif config.rotation_mode == "none":
        k = 0
    elif config.rotation_mode == "half_turn":
        # Non-square frames: odd turns would change the shape.
        k = 2 * int(rng.integers(0, 2))
    else:
        k = int(rng.integers(0, 4))
    out = rotate90(out, k)
    if rng.bernoulli(config.flip_probability):
        out = hflip(out)
    return out


def augment_all_four(image, pca: ColorPCA, config: AugmentConfig, rng: RandomStream) -> list[np.ndarray]:
    """Exhaustive mode: one jittered, maybe-flipped copy per quarter turn."""
    out = []
    for k in range(4):
        x = jitter(image, pca, rng, config.jitter_sigma)
        x = rotate90(x, k)
        if rng.bernoulli(config.flip_probability):
            x = hflip(x)
        out.append(x)
    return out
