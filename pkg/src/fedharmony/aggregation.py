"""Server-side aggregation that blends data quantity with structure quality.

A client whose correlation matrix sits close to its peer consensus gets a high
quality score; a schedule moves the aggregation weights from pure sample-count
weighting in early rounds (when local correlation estimates are unreliable)
toward quality weighting later. At t = 0 the rule coincides exactly with
size-weighted averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import WeightMask, block_alignment_loss
from .errors import EmptyInputError, ShapeMismatchError, WeightSumError

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class QualitySchedule:
    """Sharpness of the discrepancy-to-quality map and the transition horizon."""

    gamma_q: float = 5.0
    t0: int = 10

    def __post_init__(self):
        if self.gamma_q <= 0:
            raise ValueError("gamma_q must be positive")
        if self.t0 < 1:
            raise ValueError("t0 must be at least 1")


@dataclass(frozen=True)
class ClientWeight:
    client_id: int
    n_bar: float
    q_bar: float
    weight: float


@dataclass(frozen=True)
class AggregationWeights:
    round: int
    per_client: tuple

    def __post_init__(self):
        w = np.array([c.weight for c in self.per_client])
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-12:
            raise WeightSumError(f"weights are not a convex combination (sum {w.sum()})")

    def as_array(self) -> np.ndarray:
        return np.array([c.weight for c in self.per_client])


def structural_discrepancy(r_i, r_star_i, mask: WeightMask) -> float:
    """Within-cluster weighted squared distance between matrix and teacher."""
    return block_alignment_loss(r_i, r_star_i, mask)


def quality_score(s: float, gamma_q: float) -> float:
    """exp(-gamma_q * s); 1 at zero discrepancy, strictly decreasing."""
    if s < 0:
        raise ValueError("discrepancy must be nonnegative")
    return math.exp(-gamma_q * s)


def mixing_coefficient(t: int, t0: int) -> float:
    """Linear decay from 1 at t = 0 to 0 at t >= t0."""
    if t < 0:
        raise ValueError("round index must be nonnegative")
    return max(0.0, 1.0 - t / t0)


def aggregation_weights(participants, t: int, schedule: QualitySchedule) -> AggregationWeights:
    """Blend normalized counts and normalized qualities per the schedule.

    `participants` is a sequence of (client_id, n_i, s_i); normalization is
    over this round's participants only.
    """
    if not participants:
        raise EmptyInputError("at least one participant is required")
    ids = [p[0] for p in participants]
    counts = np.array([p[1] for p in participants], dtype=float)
    if counts.min() < 1:
        raise ValueError("sample counts must be at least 1")
    discrepancies = np.array([p[2] for p in participants], dtype=float)
    n_bar = counts / counts.sum()
    q = np.exp(-schedule.gamma_q * discrepancies)
    q_bar = q / q.sum()
    alpha = mixing_coefficient(t, schedule.t0)
    weights = alpha * n_bar + (1.0 - alpha) * q_bar
    per_client = tuple(
        ClientWeight(client_id=i, n_bar=float(nb), q_bar=float(qb), weight=float(w))
        for i, nb, qb, w in zip(ids, n_bar, q_bar, weights)
    )
    return AggregationWeights(round=t, per_client=per_client)


def aggregate_parameters(params) -> np.ndarray:
    """Elementwise convex combination of equally-shaped arrays.

    `params` is a sequence of (array, weight); weights must sum to 1 within
    1e-9 and shapes must agree.
    """
    if not params:
        raise EmptyInputError("nothing to aggregate")
    arrays = [np.asarray(a, dtype=float) for a, _ in params]
    weights = np.array([w for _, w in params], dtype=float)
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise ShapeMismatchError(f"parameter shapes differ: {a.shape} vs {shape}")
    if abs(weights.sum() - 1.0) > _WEIGHT_TOL or weights.min() < -_WEIGHT_TOL:
        raise WeightSumError(f"weights must be convex (sum {weights.sum()})")
    out = np.zeros(shape)
    for a, w in zip(arrays, weights):
        out += w * a
    return out
