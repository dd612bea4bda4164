"""Multi-label evaluation metrics and the paired signed-rank test.

Eight ranking/threshold metrics are reported together: mean average precision
over labels (mAP), average precision over the flattened score/label pairs
(o_map), macro precision/recall/F1 at a threshold (cp, cr, cf1) and their
micro counterparts (op, or_, of1). Ties in scores rank by original index;
labels without a single positive are skipped by mAP; zero-denominator
precision/recall is defined as 0. Skips and zero-denominator fallbacks are
logged at debug level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    map: float
    o_map: float
    cp: float
    cr: float
    cf1: float
    op: float
    or_: float
    of1: float
    threshold: float

    FIELDS = ("map", "o_map", "cp", "cr", "cf1", "op", "or_", "of1")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in self.FIELDS])

    def csv_header(self) -> str:
        return "mAP,O_mAP,CP,CR,CF1,OP,OR,OF1"

    def to_csv_row(self) -> str:
        """Percentages with one decimal, matching the reporting convention."""
        return ",".join(f"{100.0 * getattr(self, f):.1f}" for f in self.FIELDS)


def average_precision(scores, labels) -> float:
    """Mean precision at the rank of each positive, ranks by descending score.

    Ties are broken by original index (stable sort). Raises if there is no
    positive label.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeMismatchError("scores and labels must have equal length")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise EmptyInputError("average precision undefined without positives")
    order = np.argsort(-s, kind="stable")
    ranked = y[order]
    hits = np.cumsum(ranked == 1)
    ranks = np.arange(1, s.size + 1)
    precisions = hits[ranked == 1] / ranks[ranked == 1]
    return float(precisions.mean())


def _safe_div(num: float, den: float, what: str) -> float:
    if den == 0:
        log.debug("zero denominator in %s, defining value as 0", what)
        return 0.0
    return num / den


def _f1(p: float, r: float) -> float:
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def report(scores, labels, threshold: float = 0.5) -> MetricReport:
    """All eight metrics for an N x C score matrix against binary labels."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 2:
        raise ShapeMismatchError(f"scores {s.shape} and labels {y.shape} must be equal 2-D shapes")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly between 0 and 1")
    n, c = s.shape

    aps = []
    skipped = 0
    for j in range(c):
        if np.sum(y[:, j] == 1) == 0:
            skipped += 1
            continue
        aps.append(average_precision(s[:, j], y[:, j]))
    if skipped:
        log.debug("mAP skipped %d label(s) without positives", skipped)
    if not aps:
        raise EmptyInputError("no label has a positive instance")
    map_value = float(np.mean(aps))
    o_map = average_precision(s.ravel(), y.ravel())

    pred = s >= threshold
    tp = (pred & (y == 1)).sum(axis=0).astype(float)
    fp = (pred & (y == 0)).sum(axis=0).astype(float)
    fn = (~pred & (y == 1)).sum(axis=0).astype(float)

    per_class_p = np.array([_safe_div(tp[j], tp[j] + fp[j], f"precision of label {j}") for j in range(c)])
    per_class_r = np.array([_safe_div(tp[j], tp[j] + fn[j], f"recall of label {j}") for j in range(c)])
    cp = float(per_class_p.mean())
    cr = float(per_class_r.mean())

    op = _safe_div(tp.sum(), tp.sum() + fp.sum(), "micro precision")
    or_ = _safe_div(tp.sum(), tp.sum() + fn.sum(), "micro recall")

    return MetricReport(
        map=map_value,
        o_map=o_map,
        cp=cp,
        cr=cr,
        cf1=_f1(cp, cr),
        op=op,
        or_=or_,
        of1=_f1(op, or_),
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    w: float
    p_value: float
    n_effective: int
    method: str  # "exact" | "normal" | "degenerate"


_EXACT_LIMIT = 20


def _signed_ranks(diffs: np.ndarray):
    """Average ranks of |d| for the nonzero differences."""
    order = np.argsort(np.abs(diffs), kind="stable")
    ranks = np.empty(diffs.size)
    sorted_abs = np.abs(diffs)[order]
    i = 0
    while i < diffs.size:
        j = i
        while j + 1 < diffs.size and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks: np.ndarray, w_obs: float) -> float:
    """P(min(W+, W-) <= w_obs) by dynamic programming over sign assignments.

    Average ranks can be half-integers, so ranks are doubled to integers and
    the distribution of 2*W+ is accumulated by convolution. The distribution
    is symmetric about its midpoint, so the two-sided p is 2 * P(W+ <= w_obs),
    capped at 1.
    """
    doubled = np.rint(2 * ranks).astype(int)
    total = doubled.sum()
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for d in doubled:
        shifted = np.zeros_like(counts)
        shifted[d:] = counts[:total + 1 - d]
        counts = counts + shifted
    cutoff = int(math.floor(2 * w_obs + 1e-9))
    p = 2.0 * counts[: cutoff + 1].sum() / (2.0 ** len(ranks))
    return min(1.0, p)


def _normal_p(ranks: np.ndarray, w_obs: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # Tie correction: subtract sum(t^3 - t)/48 over groups of tied ranks.
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts ** 3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return 1.0
    z = (w_obs - mean) / math.sqrt(var)
    p = 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0))
    return min(1.0, p)


def wilcoxon_signed_rank(pairs) -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Zero differences are dropped; ties in |difference| share average ranks;
    W = min(W+, W-). For up to 20 effective pairs the p-value is exact (full
    enumeration of sign assignments); beyond that, a normal approximation
    with tie correction is used. All-zero differences give (0, 1.0) flagged
    as degenerate.
    """
    arr = np.asarray(list(pairs), dtype=float)
    if arr.size == 0:
        raise EmptyInputError("at least one pair is required")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeMismatchError("pairs must be a sequence of (a, b) tuples")
    diffs = arr[:, 0] - arr[:, 1]
    diffs = diffs[diffs != 0]
    if diffs.size == 0:
        return WilcoxonResult(w=0.0, p_value=1.0, n_effective=0, method="degenerate")
    ranks = _signed_ranks(diffs)
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    w = min(w_plus, w_minus)
    if diffs.size <= _EXACT_LIMIT:
        return WilcoxonResult(w=w, p_value=_exact_p(ranks, w), n_effective=diffs.size, method="exact")
    return WilcoxonResult(w=w, p_value=_normal_p(ranks, w), n_effective=diffs.size, method="normal")
