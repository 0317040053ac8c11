"""Slide-level decision from patch predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import PatchClassifier, PatchPrediction, classify_batch
from .core import LABELS, POLYP_LABELS, ClassLabel, argmax_class, as_raster
from .errors import RangeError
from .tiler import PatchSpec, extract, tile


@dataclass(frozen=True)
class DecisionThresholds:
    min_patches: int = 5
    min_mean_confidence: float = 0.70

    def __post_init__(self):
        if self.min_patches < 1:
            raise RangeError("min_patches must be >= 1")
        if not 0 < self.min_mean_confidence <= 1:
            raise RangeError("min_mean_confidence must lie in (0, 1]")


@dataclass(frozen=True)
class SlideDecision:
    predicted: ClassLabel
    tallies: dict[ClassLabel, int]
    mean_confidence: dict[ClassLabel, float]
    total_patches: int

    def to_dict(self, slide_id: str | None = None) -> dict:
        out = {} if slide_id is None else {"slide_id": slide_id}
        out.update(
            predicted=self.predicted.code,
            total_patches=self.total_patches,
            tallies={c.code: self.tallies[c] for c in LABELS},
            mean_confidence={c.code: self.mean_confidence[c] for c in LABELS},
        )
        return out


def aggregate(predictions, thresholds: DecisionThresholds = DecisionThresholds()) -> SlideDecision:
    """Vote over patch argmaxes.

    NORMAL patches count toward ``total_patches`` but never vote. The polyp
    class with the most patches (then higher mean confidence, then canonical
    order) wins only if it clears both thresholds; otherwise NORMAL.
    """
    counts = dict.fromkeys(LABELS, 0)
    sums = dict.fromkeys(LABELS, 0.0)
    total = 0
    for pred in predictions:
        probs = pred.probabilities if isinstance(pred, PatchPrediction) else pred
        label, conf = argmax_class(probs)
        counts[label] += 1
        sums[label] += conf
        total += 1
    means = {c: (sums[c] / counts[c] if counts[c] else 0.0) for c in LABELS}

    voters = [c for c in POLYP_LABELS if counts[c] > 0]
    predicted = ClassLabel.NORMAL
    if voters:
        candidate = min(voters, key=lambda c: (-counts[c], -means[c], int(c)))
        if counts[candidate] >= thresholds.min_patches and means[candidate] >= thresholds.min_mean_confidence:
            predicted = candidate
    return SlideDecision(predicted, counts, means, total)


def classify_slide(image: np.ndarray, handle: PatchClassifier, spec: PatchSpec,
                   thresholds: DecisionThresholds = DecisionThresholds(), jobs: int = 1,
                   return_predictions: bool = False):
    image = as_raster(image)
    height, width = image.shape[:2]
    origins = tile(width, height, spec)
    patches = (extract(image, o, spec) for o in origins)
    preds = classify_batch(handle, patches, [o.patch_id for o in origins], jobs=jobs)
    decision = aggregate(preds, thresholds)
    if return_predictions:
        return decision, preds
    return decision
