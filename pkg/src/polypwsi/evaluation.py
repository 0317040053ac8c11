"""Slide-level evaluation: confusion matrix, per-class metrics, exact CIs.

Matrix orientation is rows = predicted label, columns = reference label.
Per-class metrics are one-vs-rest; a 0/0 ratio is reported as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .core import LABELS, N_CLASSES, ClassLabel, parse_label
from .errors import EmptyDataset, ParseError, RangeError, UnknownLabel

CI_TOL = 1e-10


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (6, 6) int64, [predicted, reference]

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (N_CLASSES, N_CLASSES):
            raise RangeError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {c.shape}")
        if np.any(c < 0) or not np.all(c == np.round(c)):
            raise RangeError("confusion counts must be nonnegative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, c) -> int:
        return int(self.counts[int(c), int(c)])

    def fp(self, c) -> int:
        return int(self.counts[int(c), :].sum()) - self.tp(c)

    def fn(self, c) -> int:
        return int(self.counts[:, int(c)].sum()) - self.tp(c)

    def tn(self, c) -> int:
        return self.total - self.tp(c) - self.fp(c) - self.fn(c)

    def permuted(self, perm) -> "ConfusionMatrix":
        """Relabel classes: new index ``i`` holds old class ``perm[i]``."""
        perm = np.asarray(perm)
        return ConfusionMatrix(self.counts[np.ix_(perm, perm)])


def confusion(pairs) -> ConfusionMatrix:
    """Build a matrix from ``(predicted, reference)`` pairs."""
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    n = 0
    for predicted, reference in pairs:
        counts[int(predicted), int(reference)] += 1
        n += 1
    if n == 0:
        raise EmptyDataset("no (predicted, reference) pairs")
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def recall(m: ConfusionMatrix, c) -> float:
    return _ratio(m.tp(c), m.tp(c) + m.fn(c))


sensitivity = recall


def precision(m: ConfusionMatrix, c) -> float:
    return _ratio(m.tp(c), m.tp(c) + m.fp(c))


def specificity(m: ConfusionMatrix, c) -> float:
    return _ratio(m.tn(c), m.tn(c) + m.fp(c))


def npv(m: ConfusionMatrix, c) -> float:
    return _ratio(m.tn(c), m.tn(c) + m.fn(c))


def f1(m: ConfusionMatrix, c) -> float:
    p, r = precision(m, c), recall(m, c)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def balanced_accuracy(m: ConfusionMatrix, c) -> float:
    """Mean of one-vs-rest sensitivity and specificity.

    Reports label this per-class "accuracy"; plain one-vs-rest accuracy is
    :func:`one_vs_rest_accuracy`.
    """
    return (recall(m, c) + specificity(m, c)) / 2


def one_vs_rest_accuracy(m: ConfusionMatrix, c) -> float:
    return _ratio(m.tp(c) + m.tn(c), m.total)


def macro_totals(per_class: dict) -> dict:
    """Unweighted mean across classes for every metric name present."""
    rows = list(per_class.values())
    if not rows:
        raise EmptyDataset("no per-class metrics to average")
    return {name: float(np.mean([row[name] for row in rows])) for name in rows[0]}


# -- Clopper-Pearson ------------------------------------------------------------


@lru_cache(maxsize=512)
def _log_binom_coefficients(n: int) -> np.ndarray:
    lg = math.lgamma
    base = lg(n + 1)
    return np.array([base - lg(j + 1) - lg(n - j + 1) for j in range(n + 1)], dtype=np.float64)


def binom_upper_tail(k: int, n: int, p: float) -> float:
    """P[X >= k] for X ~ Binomial(n, p)."""
    return kernels.binom_upper_tail(_log_binom_coefficients(n), k, n, p)


def _bisect_increasing(f, target: float, tol: float) -> float:
    """Root of f(p) = target for f increasing on [0, 1]."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, alpha: float = 0.05, tol: float = CI_TOL) -> tuple[float, float]:
    """Exact two-sided binomial interval for ``k`` successes in ``n`` trials.

    Each bound inverts one binomial tail by bisection in p:
    ``P[X >= k | lower] = alpha/2`` and ``P[X <= k | upper] = alpha/2``.
    """
    if isinstance(k, bool) or isinstance(n, bool) or int(k) != k or int(n) != n:
        raise RangeError(f"k and n must be integers, got k={k!r}, n={n!r}")
    k, n = int(k), int(n)
    if n < 1 or not 0 <= k <= n:
        raise RangeError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0 < alpha < 1:
        raise RangeError(f"alpha must lie in (0, 1), got {alpha}")
    half = alpha / 2
    lower = 0.0 if k == 0 else _bisect_increasing(lambda p: binom_upper_tail(k, n, p), half, tol)
    # P[X <= k] = 1 - P[X >= k + 1] is decreasing in p; bisect its complement.
    upper = 1.0 if k == n else _bisect_increasing(lambda p: binom_upper_tail(k + 1, n, p), 1 - half, tol)
    return lower, upper


# -- report ------------------------------------------------------------------

METRICS = ("balanced_accuracy", "precision", "recall", "f1", "specificity", "npv", "accuracy")
_FUNCS = {
    "balanced_accuracy": balanced_accuracy,
    "precision": precision,
    "recall": recall,
    "f1": f1,
    "specificity": specificity,
    "npv": npv,
    "accuracy": one_vs_rest_accuracy,
}


@dataclass(frozen=True)
class MetricValue:
    value: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "lower": self.lower,
            "upper": self.upper,
            "pct": round(100 * self.value, 1),
            "lower_pct": round(100 * self.lower, 1),
            "upper_pct": round(100 * self.upper, 1),
        }


@dataclass(frozen=True)
class MetricReport:
    per_class: dict[ClassLabel, dict[str, MetricValue]]
    totals: dict[str, MetricValue]
    n_total: int
    interval_n: int
    convention: str

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "interval_n": self.interval_n,
            "interval_convention": self.convention,
            "classes": {
                c.code: {name: v.to_dict() for name, v in metrics.items()}
                for c, metrics in self.per_class.items()
            },
            "totals": {name: v.to_dict() for name, v in self.totals.items()},
        }


def _natural_counts(m: ConfusionMatrix, c, name: str):
    tp, fp, fn, tn = m.tp(c), m.fp(c), m.fn(c), m.tn(c)
    return {
        "precision": (tp, tp + fp),
        "recall": (tp, tp + fn),
        "f1": (2 * tp, 2 * tp + fp + fn),
        "specificity": (tn, tn + fp),
        "npv": (tn, tn + fn),
        "accuracy": (tp + tn, m.total),
    }.get(name)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def report(m: ConfusionMatrix, interval_n: int | None = None, exact_denominators: bool = False,
           alpha: float = 0.05) -> MetricReport:
    """All per-class metrics and macro totals, each with a 95% interval.

    By default an interval for value ``v`` is ``clopper_pearson(round(v * N), N)``
    with ``N = interval_n`` (the matrix total when omitted). With
    ``exact_denominators`` the ratio metrics use their own numerator and
    denominator; balanced accuracy and the totals keep the ``N`` convention.
    """
    n_total = m.total
    if n_total < 1:
        raise EmptyDataset("confusion matrix is empty")
    big_n = int(interval_n) if interval_n is not None else n_total
    if big_n < 1:
        raise RangeError("interval_n must be >= 1")

    def by_total(v):
        return clopper_pearson(min(big_n, _round_half_up(v * big_n)), big_n, alpha)

    values = {c: {name: _FUNCS[name](m, c) for name in METRICS} for c in LABELS}
    per_class = {}
    for c in LABELS:
        row = {}
        for name, v in values[c].items():
            natural = _natural_counts(m, c, name) if exact_denominators else None
            if natural is not None and natural[1] > 0:
                lo, hi = clopper_pearson(natural[0], natural[1], alpha)
            else:
                lo, hi = by_total(v)
            row[name] = MetricValue(v, lo, hi)
        per_class[c] = row
    totals = {}
    for name, v in macro_totals(values).items():
        lo, hi = by_total(v)
        totals[name] = MetricValue(v, lo, hi)
    convention = "exact" if exact_denominators else "total"
    return MetricReport(per_class, totals, n_total, big_n, convention)


# -- files -------------------------------------------------------------------


def parse_confusion(text: str) -> ConfusionMatrix:
    """Read the TSV form: a header of 6 reference labels, then 6 labelled rows."""
    rows = [
        (i, line.rstrip("\r\n").split("\t"))
        for i, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if len(rows) != N_CLASSES + 1:
        raise ParseError(f"expected a header and {N_CLASSES} rows, got {len(rows)} lines")
    (hline, header), body = rows[0], rows[1:]
    if len(header) != N_CLASSES + 1:
        raise ParseError(f"header needs {N_CLASSES + 1} fields", line=hline)
    try:
        col_labels = [parse_label(h) for h in header[1:]]
    except UnknownLabel as exc:
        raise UnknownLabel(exc.text, line=hline) from None
    if sorted(col_labels) != list(LABELS):
        raise ParseError("header must name each class once", line=hline)
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    seen = set()
    for lineno, fields in body:
        if len(fields) != N_CLASSES + 1:
            raise ParseError(f"expected {N_CLASSES + 1} fields", line=lineno)
        try:
            row_label = parse_label(fields[0])
        except UnknownLabel as exc:
            raise UnknownLabel(exc.text, line=lineno) from None
        if row_label in seen:
            raise ParseError(f"duplicate row {row_label.code}", line=lineno)
        seen.add(row_label)
        for col_label, cell in zip(col_labels, fields[1:]):
            try:
                value = int(cell)
            except ValueError:
                raise ParseError(f"non-integer count {cell!r}", line=lineno) from None
            if value < 0:
                raise ParseError("counts must be nonnegative", line=lineno)
            counts[row_label, col_label] = value
    return ConfusionMatrix(counts)


def load_confusion(path) -> ConfusionMatrix:
    with open(path, encoding="utf-8") as fh:
        return parse_confusion(fh.read())


def format_confusion(m: ConfusionMatrix) -> str:
    lines = ["prediction\\reference\t" + "\t".join(c.code for c in LABELS)]
    for c in LABELS:
        lines.append(c.code + "\t" + "\t".join(str(int(v)) for v in m.counts[c]))
    return "\n".join(lines) + "\n"


def format_report(rep: MetricReport) -> str:
    """Plain-text table, metrics by row and classes by column (percentages)."""
    names = [("balanced_accuracy", "Accuracy"), ("precision", "Precision"), ("recall", "Recall"), ("f1", "F1")]
    header = f"{'':<10}" + "".join(f"{c.code:>22}" for c in LABELS) + f"{'Total':>22}"
    lines = [header]
    for key, title in names:
        cells = [rep.per_class[c][key] for c in LABELS] + [rep.totals[key]]
        lines.append(
            f"{title:<10}"
            + "".join(f"{100 * v.value:>6.1f} ({100 * v.lower:4.1f}-{100 * v.upper:5.1f})".rjust(22) for v in cells)
        )
    return "\n".join(lines) + "\n"
