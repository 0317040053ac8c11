"""Shared vocabulary: class labels, image arrays, probability vectors, RNG.

Images are plain numpy arrays. A raster image is ``uint8`` with shape
``(height, width, 3)``; a tensor image is the ``float64`` counterpart after
normalization. Probability vectors are length-6 ``float64`` arrays indexed by
:class:`ClassLabel` order.
"""

from __future__ import annotations

import enum
import hashlib

import numpy as np

from .errors import RangeError, ShapeError, UnknownLabel

PROB_SUM_TOL = 1e-6


class ClassLabel(enum.IntEnum):
    """The six slide/patch categories, in canonical order."""

    HP = 0
    SSP = 1
    TSA = 2
    TA = 3
    TVV = 4
    NORMAL = 5

    @property
    def code(self) -> str:
        return _CODES[self]

    @property
    def display_name(self) -> str:
        return _DISPLAY[self]

    def __str__(self) -> str:
        return self.code


_CODES = {
    ClassLabel.HP: "HP",
    ClassLabel.SSP: "SSP",
    ClassLabel.TSA: "TSA",
    ClassLabel.TA: "TA",
    ClassLabel.TVV: "TVV",
    ClassLabel.NORMAL: "Normal",
}

_DISPLAY = {
    ClassLabel.HP: "hyperplastic polyp",
    ClassLabel.SSP: "sessile serrated polyp",
    ClassLabel.TSA: "traditional serrated adenoma",
    ClassLabel.TA: "tubular adenoma",
    ClassLabel.TVV: "tubulovillous/villous adenoma",
    ClassLabel.NORMAL: "normal",
}

# "TVA/V" is the common clinical spelling.
_ALIASES = {"tva/v": ClassLabel.TVV, "tva": ClassLabel.TVV}

_LOOKUP = {}
for _label in ClassLabel:
    _LOOKUP[_label.code.lower()] = _label
    _LOOKUP[_label.display_name.lower()] = _label
    _LOOKUP[_label.name.lower()] = _label
_LOOKUP.update(_ALIASES)

LABELS = tuple(ClassLabel)
POLYP_LABELS = tuple(label for label in ClassLabel if label is not ClassLabel.NORMAL)
N_CLASSES = len(LABELS)


def parse_label(text: str) -> ClassLabel:
    """Case-insensitive lookup by code or display name."""
    if not text or not text.strip():
        raise UnknownLabel(text)
    try:
        return _LOOKUP[text.strip().lower()]
    except KeyError:
        raise UnknownLabel(text) from None


# -- images -----------------------------------------------------------------


def as_raster(image) -> np.ndarray:
    """Validate/convert to an ``(H, W, 3) uint8`` array.

    Grayscale ``(H, W)`` or ``(H, W, 1)`` input is replicated across channels.
    """
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if arr.shape[2] != 3:
        raise ShapeError(f"expected 3 channels, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"image dimensions must be >= 1, got {arr.shape[:2]}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) or np.issubdtype(arr.dtype, np.floating):
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise RangeError("pixel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def blank_raster(width: int, height: int) -> np.ndarray:
    return np.zeros((height, width, 3), dtype=np.uint8)


# -- probability vectors ----------------------------------------------------


def as_prob_vector(values, tol: float = PROB_SUM_TOL) -> np.ndarray:
    p = np.asarray(values, dtype=np.float64).reshape(-1)
    if p.shape != (N_CLASSES,):
        raise ShapeError(f"probability vector must have {N_CLASSES} entries, got {p.size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise RangeError(f"probabilities must lie in [0, 1]: {p.tolist()}")
    if abs(p.sum() - 1.0) > tol:
        raise RangeError(f"probabilities sum to {p.sum():.8f}, not 1")
    return p


def argmax_class(p) -> tuple[ClassLabel, float]:
    """Most probable label and its probability; ties go to the earliest label."""
    p = np.asarray(p, dtype=np.float64)
    # np.argmax returns the first maximal index, i.e. canonical order.
    i = int(np.argmax(p))
    return ClassLabel(i), float(p[i])


# -- randomness -------------------------------------------------------------


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RandomStream:
    """Seeded stream backed by numpy's PCG64 bit generator.

    PCG64 output is specified bit-for-bit, so equal seeds give equal draws on
    every platform. Child streams come from :meth:`spawn`, which mixes the
    parent seed with a key through ``SeedSequence``; the child does not depend
    on how much of the parent has been consumed.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def __repr__(self):
        return f"RandomStream(seed={self.seed})"

    def spawn(self, *keys) -> "RandomStream":
        ss = np.random.SeedSequence([self.seed, *(_key_to_int(k) for k in keys)])
        child = RandomStream.__new__(RandomStream)
        child.seed = int(ss.generate_state(2, np.uint64)[0])
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        return self._gen.choice(n, size=k, replace=False)

    def bernoulli(self, p: float) -> bool:
        return bool(self._gen.random() < p)
