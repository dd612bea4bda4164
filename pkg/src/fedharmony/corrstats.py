"""Soft label co-occurrence statistics and the phi-style correlation matrix.

A model's sigmoid outputs on a local dataset form an N x C score matrix whose
columns are soft indicators of label occurrence. From column means and products
we estimate marginal and joint occurrence probabilities, normalize covariance
by Bernoulli-style standard deviations to get a correlation matrix in [-1, 1],
and differentiate the whole chain analytically so a correlation-space loss can
backpropagate into the scores.

All functions are pure and allocate fresh arrays; nothing here mutates inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError

DEFAULT_EPSILON = 1e-8

# Below this, a Bernoulli variance is treated as exactly zero and the
# square-root derivative is dropped (the one-sided limit of the quotient rule).
_VAR_FLOOR = 1e-300


@dataclass(frozen=True)
class PredictionMatrix:
    """N x C matrix of scores in [0, 1]; rows are instances, columns labels."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2:
            raise ShapeMismatchError(f"scores must be 2-D, got shape {s.shape}")
        n, c = s.shape
        if n < 1:
            raise EmptyInputError("prediction matrix needs at least one instance")
        if c < 2:
            raise ShapeMismatchError("prediction matrix needs at least two labels")
        if not np.isfinite(s).all():
            raise ValueError("scores contain non-finite entries")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", s)

    @property
    def n_instances(self) -> int:
        return self.scores.shape[0]

    @property
    def n_labels(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class LabelMarginals:
    """Marginal vector p (length C) and symmetric joint matrix P (C x C)."""

    marginal: np.ndarray
    joint: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.marginal, dtype=float)
        j = np.asarray(self.joint, dtype=float)
        c = p.shape[0]
        if j.shape != (c, c):
            raise ShapeMismatchError(f"joint shape {j.shape} does not match {c} labels")
        object.__setattr__(self, "marginal", p)
        object.__setattr__(self, "joint", j)

    @property
    def n_labels(self) -> int:
        return self.marginal.shape[0]


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric C x C matrix of phi-style correlations, entries in [-1, 1]."""

    values: np.ndarray
    epsilon: float = field(default=DEFAULT_EPSILON)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeMismatchError(f"correlation matrix must be square, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("correlation matrix has non-finite entries")
        if not np.array_equal(v, v.T):
            # Symmetry must be exact; matrices built by this package always are.
            raise ValueError("correlation matrix is not exactly symmetric")
        object.__setattr__(self, "values", v)

    @property
    def n_labels(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        """Headerless CSV, one row per label, round-trip precision."""
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")

    @staticmethod
    def from_csv(path, epsilon: float = DEFAULT_EPSILON) -> "CorrelationMatrix":
        values = np.loadtxt(path, delimiter=",", ndmin=2)
        return CorrelationMatrix(_exact_symmetrize(values), epsilon)


def _exact_symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


def marginal_stats(scores: np.ndarray):
    """Array-level core of `estimate_marginals`: returns (marginal, joint).

    Accepts any N x C array with C >= 1 and performs no validation; the
    block-restricted alignment path uses this on score slices.
    """
    f = np.asarray(scores, dtype=float)
    n = f.shape[0]
    marginal = f.sum(axis=0) / n
    joint = _exact_symmetrize(f.T @ f / n)
    return marginal, joint


def estimate_marginals(preds: PredictionMatrix) -> LabelMarginals:
    """Column means and mean pairwise products of the score matrix.

    marginal[c]   = mean_i F[i, c]
    joint[c, c']  = mean_i F[i, c] * F[i, c']   (so joint[c, c] is the mean
                     squared score of column c, not the marginal).
    """
    marginal, joint = marginal_stats(preds.scores)
    return LabelMarginals(marginal=marginal, joint=joint)


def phi_values(scores: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Array-level phi correlation of an unvalidated N x C score array."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p, joint = marginal_stats(scores)
    cov = joint - np.outer(p, p)
    stdev = np.sqrt(np.maximum(p * (1.0 - p), 0.0))
    denom = np.outer(stdev, stdev) + epsilon
    return cov / denom


def phi_correlation(m: LabelMarginals, epsilon: float = DEFAULT_EPSILON) -> CorrelationMatrix:
    """Normalized covariance of soft label indicators.

    R[c, c'] = (joint[c, c'] - p_c p_c') / (sqrt(p_c(1-p_c) p_c'(1-p_c')) + eps)

    The diagonal uses the same formula, so with soft scores it is generally
    below 1. eps > 0 keeps every entry finite and strictly inside [-1, 1].
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = m.marginal
    cov = m.joint - np.outer(p, p)
    stdev = np.sqrt(np.maximum(p * (1.0 - p), 0.0))
    denom = np.outer(stdev, stdev) + epsilon
    return CorrelationMatrix(values=cov / denom, epsilon=epsilon)


def correlation_matrix(preds: PredictionMatrix, epsilon: float = DEFAULT_EPSILON) -> CorrelationMatrix:
    """Convenience composition of `estimate_marginals` and `phi_correlation`."""
    return phi_correlation(estimate_marginals(preds), epsilon)


def gradient_slots(scores: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Array-level core of `correlation_gradient`; see it for the layout."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    f = np.asarray(scores, dtype=float)
    n, c = f.shape
    p = f.sum(axis=0) / n
    joint = _exact_symmetrize(f.T @ f / n)
    cov = joint - np.outer(p, p)
    var = np.maximum(p * (1.0 - p), 0.0)
    u = np.sqrt(var)
    denom = np.outer(u, u) + epsilon  # (C, C)

    # d u_c / dF[i, c] = (1 - 2 p_c) / (2 N u_c), zero in the degenerate limit.
    safe_u = np.where(var > _VAR_FLOOR, u, 1.0)
    du = np.where(var > _VAR_FLOOR, (1.0 - 2.0 * p) / (2.0 * n * safe_u), 0.0)

    # First term of the quotient rule: d cov[c, c'] / dF[i, c] = (F[i, c'] - p_c') / N,
    # independent of c, so it broadcasts along the first axis.
    centered = (f - p[None, :]).T / n  # (C, N): centered[c', i]
    gnum = np.broadcast_to(centered[None, :, :], (c, c, n))

    # Second term: - cov/denom^2 * d denom / dF[i, c] with d denom = du_c * u_c'.
    ratio = cov / (denom * denom)  # (C, C)
    slots = gnum / denom[:, :, None] - (ratio * np.outer(du, u))[:, :, None]
    return slots


def correlation_gradient(preds: PredictionMatrix, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Analytic Jacobian of the correlation matrix w.r.t. the scores.

    dR[c, c']/dF[i, j] is nonzero only for j in {c, c'}, so the Jacobian is
    returned compactly as an array G of shape (C, C, N) with the convention

        dR[c, c'] / dF[i, j] = G[c, c', i] * (j == c) + G[c', c, i] * (j == c')

    where both terms contribute when c == c' == j. `dense_correlation_gradient`
    expands this to the full (C, C, N, C) tensor for small inputs.

    Columns with zero Bernoulli variance (marginal exactly 0 or 1) use the
    one-sided limit of the quotient rule, which drops the square-root term;
    the result is finite and matches finite differences taken inside [0, 1].
    """
    return gradient_slots(preds.scores, epsilon)


def dense_correlation_gradient(preds: PredictionMatrix, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Full (C, C, N, C) tensor dR[c, c']/dF[i, j]. Intended for small inputs."""
    slots = correlation_gradient(preds, epsilon)
    c, _, n = slots.shape
    dense = np.zeros((c, c, n, c))
    for a in range(c):
        for b in range(c):
            dense[a, b, :, a] += slots[a, b, :]
            dense[a, b, :, b] += slots[b, a, :]
    return dense


def vjp_values(scores: np.ndarray, upstream: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Array-level core of `correlation_vjp`, without validation."""
    a = np.asarray(upstream, dtype=float)
    slots = gradient_slots(scores, epsilon)
    # dL/dF[i, j] = sum_c (A[j, c] + A[c, j]) * slots[j, c, i]
    sym = a + a.T
    return np.einsum("jc,jci->ij", sym, slots)


def correlation_vjp(preds: PredictionMatrix, upstream: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Backpropagate d(loss)/dR into d(loss)/dF for a symmetric upstream.

    `upstream` is the C x C array of partial derivatives of a scalar loss with
    respect to each correlation entry (treated as independent coordinates).
    Returns the N x C gradient with respect to the scores.
    """
    a = np.asarray(upstream, dtype=float)
    c = preds.n_labels
    if a.shape != (c, c):
        raise ShapeMismatchError(f"upstream shape {a.shape}, expected {(c, c)}")
    return vjp_values(preds.scores, a, epsilon)
