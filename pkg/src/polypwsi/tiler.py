"""Patch-size estimation and overlapping patch decomposition of a slide."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import RandomStream
from .errors import EmptyDataset, OutOfBounds, RangeError

DEFAULT_OVERLAP = 1.0 / 3.0


@dataclass(frozen=True)
class PatchSpec:
    patch_width: int
    patch_height: int
    overlap_fraction: float = DEFAULT_OVERLAP

    def __post_init__(self):
        if self.patch_width < 1 or self.patch_height < 1:
            raise RangeError(f"patch size must be >= 1, got {self.patch_width}x{self.patch_height}")
        if not 0 <= self.overlap_fraction < 1:
            raise RangeError(f"overlap_fraction must lie in [0, 1), got {self.overlap_fraction}")

    @property
    def stride_x(self) -> int:
        return axis_stride(self.patch_width, self.overlap_fraction)

    @property
    def stride_y(self) -> int:
        return axis_stride(self.patch_height, self.overlap_fraction)


class PatchOrigin(NamedTuple):
    x: int
    y: int

    @property
    def patch_id(self) -> str:
        return f"{self.x}_{self.y}"


def axis_stride(extent: int, overlap: float) -> int:
    # Floor keeps the realized overlap at or above the requested fraction.
    # The epsilon stops 60 * (2/3) = 39.99999... from flooring to 39.
    return max(1, math.floor(extent * (1.0 - overlap) + 1e-9))


def lower_median(values) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def median_dimensions(dims, subset_fraction: float, rng: RandomStream) -> tuple[int, int]:
    """Element-wise lower median of (width, height) pairs over a random subset.

    The subset has ``ceil(n * subset_fraction)`` members drawn without
    replacement.
    """
    dims = list(dims)
    if not dims:
        raise EmptyDataset("no dimensions to take a median of")
    if not 0 < subset_fraction <= 1:
        raise RangeError(f"subset_fraction must lie in (0, 1], got {subset_fraction}")
    k = max(1, math.ceil(len(dims) * subset_fraction - 1e-9))
    picks = rng.sample_indices(len(dims), k)
    widths = [dims[i][0] for i in picks]
    heights = [dims[i][1] for i in picks]
    return lower_median(widths), lower_median(heights)


def estimate_patch_size(crops, subset_fraction: float = 0.15, rng: RandomStream | None = None):
    """Median crop size, the working patch size for slide decomposition."""
    crops = list(crops)
    if not crops:
        raise EmptyDataset("no crops to estimate a patch size from")
    rng = rng if rng is not None else RandomStream(0)
    return median_dimensions([c.bounds[2:] for c in crops], subset_fraction, rng)


def axis_origins(image_extent: int, patch_extent: int, stride: int) -> list[int]:
    if image_extent <= patch_extent:
        return [0]
    last = image_extent - patch_extent
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def tile(image_width: int, image_height: int, spec: PatchSpec) -> list[PatchOrigin]:
    """Patch origins sorted by (y, x); together they cover every pixel."""
    if image_width < 1 or image_height < 1:
        raise RangeError(f"image dimensions must be >= 1, got {image_width}x{image_height}")
    xs = axis_origins(image_width, spec.patch_width, spec.stride_x)
    ys = axis_origins(image_height, spec.patch_height, spec.stride_y)
    return [PatchOrigin(x, y) for y in ys for x in xs]


def extract(image: np.ndarray, origin: PatchOrigin, spec: PatchSpec) -> np.ndarray:
    """Copy one patch out of ``image``; area beyond the border is black."""
    height, width = image.shape[:2]
    x, y = origin
    pw, ph = spec.patch_width, spec.patch_height
    if x < 0 or y < 0 or x >= width or y >= height:
        raise OutOfBounds(f"origin ({x}, {y}) lies outside the {width}x{height} image")
    if x + pw <= width and y + ph <= height:
        return image[y:y + ph, x:x + pw].copy()
    patch = np.zeros((ph, pw) + image.shape[2:], dtype=image.dtype)
    src = image[y:min(y + ph, height), x:min(x + pw, width)]
    patch[: src.shape[0], : src.shape[1]] = src
    return patch


def iter_patches(image: np.ndarray, spec: PatchSpec):
    height, width = image.shape[:2]
    for origin in tile(width, height, spec):
        yield origin, extract(image, origin, spec)


def format_tiles(origins, spec: PatchSpec) -> str:
    lines = ["patch_id\tx\ty\twidth\theight"]
    for o in origins:
        lines.append(f"{o.patch_id}\t{o.x}\t{o.y}\t{spec.patch_width}\t{spec.patch_height}")
    return "\n".join(lines) + "\n"
