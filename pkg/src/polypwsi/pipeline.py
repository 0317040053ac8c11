"""Crop-to-classifier training glue shared by the CLI and the smoke tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classifier import NetworkClassifier
from .core import RandomStream, as_raster
from .errors import EmptyDataset
from .nnet import checkpoint
from .nnet.model import TinyResNet
from .nnet.optim import SGDConfig
from .nnet.training import TrainResult, train
from .preprocess import (
    AugmentConfig,
    ColorPCA,
    ConformTarget,
    NormalizationStats,
    augment,
    compute_conform_target,
    compute_stats,
    conform_size,
    denormalize,
    fit_color_pca,
    normalize,
)
from .tiler import median_dimensions


@dataclass
class TrainedPipeline:
    model: TinyResNet
    stats: NormalizationStats
    target: ConformTarget
    pca: ColorPCA | None
    patch_size: tuple[int, int]
    result: TrainResult | None = None
    seed: int = 0

    def classifier(self) -> NetworkClassifier:
        return NetworkClassifier(self.model, self.stats, self.target)

    def metadata(self) -> dict:
        meta = {
            "stats": {"mean": list(self.stats.mean), "std": list(self.stats.std)},
            "conform_target": [self.target.target_width, self.target.target_height],
            "patch_size": list(self.patch_size),
            "seed": self.seed,
        }
        if self.pca is not None:
            meta["pca"] = {
                "eigenvalues": self.pca.eigenvalues.tolist(),
                "eigenvectors": self.pca.eigenvectors.tolist(),
            }
        return meta

    def save(self, path) -> None:
        checkpoint.save(path, self.model, self.metadata())

    @classmethod
    def load(cls, path) -> "TrainedPipeline":
        model, meta = checkpoint.load(path)
        pca = None
        if "pca" in meta:
            pca = ColorPCA(np.array(meta["pca"]["eigenvalues"]), np.array(meta["pca"]["eigenvectors"]))
        return cls(
            model=model,
            stats=NormalizationStats(tuple(meta["stats"]["mean"]), tuple(meta["stats"]["std"])),
            target=ConformTarget(*meta["conform_target"]),
            pca=pca,
            patch_size=tuple(meta["patch_size"]),
            seed=meta.get("seed", 0),
        )


def _subset(items, fraction, rng):
    k = max(1, math.ceil(len(items) * fraction - 1e-9))
    return [items[i] for i in sorted(rng.sample_indices(len(items), k))]


def make_train_transform(stats: NormalizationStats, pca: ColorPCA, config: AugmentConfig, square: bool):
    """Augmentation applied to normalized tensors.

    Jitter is defined on [0, 1] intensities, so each tensor is mapped back,
    augmented and re-normalized.
    """
    if not square and config.rotation_mode == "random_quarter":
        config = AugmentConfig(config.jitter_sigma, config.flip_probability, "half_turn", config.fixed_rotation)

    def transform(tensor, rng):
        unit = denormalize(tensor, stats) / 255.0
        return normalize(augment(unit, pca, config, rng) * 255.0, stats)

    return transform


def fit_pipeline(crops, labels, config: SGDConfig, augment_config: AugmentConfig | None = AugmentConfig(),
                 subset_fraction: float = 0.15, pca_fraction: float = 0.15, validation=None,
                 **arch) -> TrainedPipeline:
    """Fit conform target, statistics, color PCA and the network on crops.

    ``crops`` are raster images of any size. The conform target and the
    working patch size are medians over independent random subsets.
    """
    crops = [as_raster(c) for c in crops]
    if not crops:
        raise EmptyDataset("no training crops")
    rng = RandomStream(config.seed)
    dims = [(c.shape[1], c.shape[0]) for c in crops]
    target = compute_conform_target(dims, subset_fraction, rng.spawn("conform"))
    patch_size = median_dimensions(dims, subset_fraction, rng.spawn("patch-size"))
    stats = compute_stats(crops)
    pca = fit_color_pca(_subset(crops, pca_fraction, rng.spawn("pca")))

    tensors = [normalize(conform_size(c, target), stats) for c in crops]
    transform = None
    if augment_config is not None:
        square = target.target_width == target.target_height
        transform = make_train_transform(stats, pca, augment_config, square)
    val = None
    if validation is not None:
        vimgs, vlabels = validation
        val = ([normalize(conform_size(as_raster(c), target), stats) for c in vimgs], vlabels)
    result = train(tensors, labels, config, rng.spawn("train"), validation=val, transform=transform, **arch)
    model = result.best_model if result.best_model is not None else result.model
    return TrainedPipeline(model, stats, target, pca, patch_size, result, config.seed)
