"""Synthetic image generators for smoke tests and demos.

None of this resembles histology; it gives the pipeline separable inputs with
known labels.
"""

from __future__ import annotations

import numpy as np

from .core import ClassLabel, RandomStream

BLOB_COLORS = np.array([[220, 40, 40], [40, 200, 60], [50, 70, 230]], dtype=np.float64)


def color_blob_dataset(n_per_class: int = 40, size: int = 16, n_classes: int = 3, seed: int = 0):
    """Disks of a class-specific color on a noisy gray background.

    Returns ``(images, labels)`` with images ``(N, size, size, 3) uint8``.
    """
    rng = RandomStream(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    images, labels = [], []
    for label in range(n_classes):
        for _ in range(n_per_class):
            img = 110 + rng.normal(0, 18, size=(size, size, 3))
            r = rng.uniform(size * 0.18, size * 0.32)
            cy, cx = rng.uniform(r, size - r, size=2)
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            img[disk] = BLOB_COLORS[label] + rng.normal(0, 12, size=(int(disk.sum()), 3))
            images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
            labels.append(label)
    return np.stack(images), np.array(labels)


# Base color and stripe period per class; textures differ in both hue and
# spatial frequency so patches are separable at small sizes.
TEXTURES = {
    ClassLabel.HP: ((200, 90, 150), 3.0, 0.0),
    ClassLabel.SSP: ((120, 60, 170), 5.0, np.pi / 2),
    ClassLabel.TSA: ((230, 150, 180), 4.0, np.pi / 4),
    ClassLabel.TA: ((90, 40, 120), 6.0, 3 * np.pi / 4),
    ClassLabel.TVV: ((170, 110, 90), 2.5, np.pi / 3),
    ClassLabel.NORMAL: ((235, 215, 225), 8.0, 0.0),
}


def texture_field(label: ClassLabel, width: int, height: int, rng: RandomStream, noise: float = 12.0) -> np.ndarray:
    """A class-specific striped color texture with random phase and noise."""
    base, period, angle = TEXTURES[ClassLabel(label)]
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    angle = angle + rng.normal(0, 0.1)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period + phase)
    img = np.asarray(base, dtype=np.float64) + 35.0 * wave[..., None] * np.array([1.0, 0.6, 0.8])
    img += rng.normal(0, noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthetic_slide(label: ClassLabel, width: int, height: int, rng: RandomStream,
                    lesion_fraction: float = 0.6):
    """Normal tissue with one rectangular lesion region of ``label``.

    Returns ``(image, (x, y, w, h))``; the box is the lesion, or the whole
    slide for NORMAL.
    """
    slide = texture_field(ClassLabel.NORMAL, width, height, rng)
    if ClassLabel(label) is ClassLabel.NORMAL:
        return slide, (0, 0, width, height)
    lw, lh = max(1, int(width * lesion_fraction)), max(1, int(height * lesion_fraction))
    x0 = int(rng.integers(0, width - lw + 1))
    y0 = int(rng.integers(0, height - lh + 1))
    slide[y0:y0 + lh, x0:x0 + lw] = texture_field(label, lw, lh, rng)
    return slide, (x0, y0, lw, lh)


def write_slide_dataset(root, n_train: int = 10, n_test: int = 10, size: int = 96,
                        crops_per_slide: int = 4, crop_range=(20, 28), seed: int = 0):
    """Write slides, a slide manifest and a crop manifest under ``root``.

    Crops are cut from the lesion box of each training slide. Returns the
    paths of ``(manifest.tsv, crops.tsv)``.
    """
    from pathlib import Path

    from .ingest import CropRecord, SlideRecord, atomic_write_text, format_manifest, write_image

    root = Path(root)
    (root / "slides").mkdir(parents=True, exist_ok=True)
    rng = RandomStream(seed)
    slides, crops = [], []
    for split, count in (("train", n_train), ("test", n_test)):
        for label in ClassLabel:
            for i in range(count):
                sid = f"{split}-{label.code.lower()}-{i:03d}"
                srng = rng.spawn(sid)
                image, (bx, by, bw, bh) = synthetic_slide(label, size, size, srng)
                write_image(image, root / "slides" / f"{sid}.ppm")
                slides.append(SlideRecord(sid, f"slides/{sid}.ppm", label, split))
                if split != "train":
                    continue
                for j in range(crops_per_slide):
                    cw, ch = (int(v) for v in srng.integers(crop_range[0], crop_range[1] + 1, size=2))
                    cw, ch = min(cw, bw), min(ch, bh)
                    cx = bx + int(srng.integers(0, bw - cw + 1))
                    cy = by + int(srng.integers(0, bh - ch + 1))
                    crops.append(CropRecord(f"{sid}-c{j}", sid, (cx, cy, cw, ch), label))
    atomic_write_text(root / "manifest.tsv", format_manifest(slides))
    atomic_write_text(root / "crops.tsv", format_manifest(crops))
    return root / "manifest.tsv", root / "crops.tsv"
