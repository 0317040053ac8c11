"""Patch classifiers: constant, recorded (replayed from file) and network."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import N_CLASSES, as_prob_vector
from .errors import DuplicateId, MissingPrediction, ParseError, PipelineError, RangeError
from .nnet.layers import softmax
from .nnet.model import TinyResNet
from .preprocess import ConformTarget, NormalizationStats, conform_size, normalize

RECORDED_COLUMNS = ("patch_id", "p_hp", "p_ssp", "p_tsa", "p_ta", "p_tvv", "p_normal")
RENORMALIZE_TOL = 1e-4
REJECT_TOL = 1e-2


@dataclass(frozen=True)
class PatchPrediction:
    patch_id: str
    probabilities: np.ndarray


class PatchClassifier(Protocol):
    def predict(self, patch: np.ndarray, patch_id: str) -> np.ndarray: ...


class ConstantClassifier:
    """Returns the same probability vector for every patch."""

    behavior = "constant"

    def __init__(self, probabilities):
        self.probabilities = as_prob_vector(probabilities)
        self.probabilities.setflags(write=False)

    @classmethod
    def one_hot(cls, label):
        p = np.zeros(N_CLASSES)
        p[int(label)] = 1.0
        return cls(p)

    def predict(self, patch, patch_id):
        return self.probabilities.copy()


class RecordedClassifier:
    """Replays externally produced per-patch probabilities."""

    behavior = "recorded"

    def __init__(self, table: dict[str, np.ndarray]):
        self.table = {k: as_prob_vector(v) for k, v in table.items()}

    def predict(self, patch, patch_id):
        try:
            return self.table[patch_id].copy()
        except KeyError:
            raise MissingPrediction(patch_id) from None

    @classmethod
    def from_tsv(cls, path):
        with open(path, encoding="utf-8", newline="") as fh:
            return cls(parse_recorded(fh.read()))


def parse_recorded(text: str) -> dict[str, np.ndarray]:
    """Parse a recorded-predictions table.

    Rows whose probabilities sum to within ``REJECT_TOL`` of 1 are
    renormalized; anything further off is rejected.
    """
    table: dict[str, np.ndarray] = {}
    header_seen = False
    for lineno, row in enumerate(csv.reader(text.splitlines(), delimiter="\t"), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if not header_seen:
            if tuple(c.strip().lower() for c in row) != RECORDED_COLUMNS:
                raise ParseError(f"expected header {RECORDED_COLUMNS}", line=lineno)
            header_seen = True
            continue
        if len(row) != len(RECORDED_COLUMNS):
            raise ParseError(f"expected {len(RECORDED_COLUMNS)} fields, got {len(row)}", line=lineno)
        pid = row[0].strip()
        try:
            p = np.array([float(v) for v in row[1:]])
        except ValueError:
            raise ParseError("non-numeric probability", line=lineno) from None
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ParseError("probabilities must be finite and nonnegative", line=lineno)
        total = p.sum()
        if abs(total - 1.0) > REJECT_TOL:
            raise ParseError(f"probabilities sum to {total:.6f}", line=lineno)
        if pid in table:
            raise DuplicateId(pid)
        table[pid] = p / total
    if not header_seen:
        raise ParseError("recorded predictions file has no header")
    return table


def format_recorded(predictions) -> str:
    lines = ["\t".join(RECORDED_COLUMNS)]
    for pred in predictions:
        lines.append(pred.patch_id + "\t" + "\t".join(repr(float(v)) for v in pred.probabilities))
    return "\n".join(lines) + "\n"


class NetworkClassifier:
    """Softmax of a :class:`TinyResNet` on the conformed, normalized patch.

    Inference never augments, so repeated calls agree bit for bit.
    """

    behavior = "network"

    def __init__(self, model: TinyResNet, stats: NormalizationStats, target: ConformTarget):
        self.model = model
        self.stats = stats
        self.target = target

    def prepare(self, patch: np.ndarray) -> np.ndarray:
        x = normalize(conform_size(patch, self.target), self.stats)
        return np.ascontiguousarray(x.transpose(2, 0, 1)[None])

    def predict(self, patch, patch_id):
        # One patch per forward pass: batched GEMMs may round differently.
        p = softmax(self.model.forward(self.prepare(patch)))[0]
        return p


def classify(handle: PatchClassifier, patch: np.ndarray, patch_id: str) -> PatchPrediction:
    p = handle.predict(patch, patch_id)
    p = as_prob_vector(p, tol=1e-6)
    return PatchPrediction(patch_id, p)


def classify_batch(handle: PatchClassifier, patches, patch_ids=None, jobs: int = 1) -> list[PatchPrediction]:
    """Classify patches in input order; ``jobs > 1`` uses a thread pool.

    The first failing patch (in input order) aborts the batch; its error is
    re-raised, with the patch id attached as ``patch_id`` when missing.
    """
    patches = list(patches)
    if patch_ids is None:
        patch_ids = [str(i) for i in range(len(patches))]
    patch_ids = list(patch_ids)
    if len(patch_ids) != len(patches):
        raise RangeError(f"{len(patches)} patches but {len(patch_ids)} ids")
    if jobs <= 1 or len(patches) <= 1:
        return [_classify_tagged(handle, p, pid) for p, pid in zip(patches, patch_ids)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_classify_tagged, handle, p, pid) for p, pid in zip(patches, patch_ids)]
        try:
            return [f.result() for f in futures]
        finally:
            for f in futures:
                f.cancel()


def _classify_tagged(handle, patch, patch_id):
    try:
        return classify(handle, patch, patch_id)
    except PipelineError as exc:
        if getattr(exc, "patch_id", None) is None:
            exc.patch_id = patch_id
        raise
