"""Correlation-alignment objectives and their exact optimization behavior.

Two quadratic objectives over C x C matrices, both weighted elementwise by a
nonnegative mask with larger weights inside clusters than across them:

  full:  every entry of (R - R*) counts;
  block: only within-cluster entries count, and iterates live in the
         block-diagonal subspace.

Both have diagonal Hessians, so exact gradient descent contracts every
coordinate independently by (1 - 2*eta*weight^2) per step. That closed form is
what the verification suite checks, along with the exact decomposition of the
full objective into its block part plus the masked cross-cluster consensus
mass (disjoint supports are orthogonal under the Frobenius inner product).

The block-restricted training loss is also implemented here with a fast path
that never materializes cross-cluster statistics, which is where the speedup
of block-wise alignment comes from.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import LabelPartition
from .corrstats import (
    DEFAULT_EPSILON,
    CorrelationMatrix,
    PredictionMatrix,
    phi_values,
    vjp_values,
)
from .errors import ShapeMismatchError, StepSizeError, SupportViolationError
from .seeding import stream


@dataclass(frozen=True)
class WeightMask:
    """Nonnegative symmetric weights with in-cluster entries dominating."""

    values: np.ndarray
    partition: LabelPartition
    gamma_in: float = field(init=False)
    gamma_out: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.partition.n_labels, self.partition.n_labels):
            raise ShapeMismatchError("weight mask shape does not match partition")
        if v.min() < 0:
            raise ValueError("weights must be nonnegative")
        if not np.array_equal(v, v.T):
            raise ValueError("weight mask must be exactly symmetric")
        mask = self.partition.block_mask()
        gamma_in = float(v[mask].min())
        gamma_out = float(v[~mask].max()) if (~mask).any() else 0.0
        if gamma_in <= 0:
            raise ValueError("in-cluster weights must be positive")
        if gamma_out >= gamma_in:
            raise ValueError(
                f"cross-cluster weight {gamma_out} must stay below in-cluster minimum {gamma_in}"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gamma_in", gamma_in)
        object.__setattr__(self, "gamma_out", gamma_out)

    @property
    def n_labels(self) -> int:
        return self.values.shape[0]


def uniform_mask(partition: LabelPartition, gamma_in: float = 1.0, gamma_out: float = 0.0) -> WeightMask:
    """Constant-by-region mask: gamma_in within clusters, gamma_out across."""
    mask = partition.block_mask()
    values = np.where(mask, gamma_in, gamma_out).astype(float)
    return WeightMask(values=values, partition=partition)


@dataclass(frozen=True)
class BlockDecomposition:
    """Consensus split into within-cluster part B and cross-cluster part E."""

    in_block: np.ndarray
    cross_block: np.ndarray
    partition: LabelPartition


@dataclass(frozen=True)
class AlignmentLossSpec:
    """Configuration of the correlation-alignment loss used in local training."""

    lam: float = 0.1
    partition: LabelPartition | None = None
    psi: str = "weighted_sq_frobenius"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.psi != "weighted_sq_frobenius":
            raise ValueError(f"unsupported divergence {self.psi!r}")


def _as_array(m) -> np.ndarray:
    if isinstance(m, CorrelationMatrix):
        return m.values
    return np.asarray(m, dtype=float)


def project_block_diagonal(m, partition: LabelPartition) -> np.ndarray:
    """Zero every entry outside the within-cluster index pairs. Idempotent."""
    arr = _as_array(m)
    if arr.shape != (partition.n_labels, partition.n_labels):
        raise ShapeMismatchError("matrix shape does not match partition")
    return np.where(partition.block_mask(), arr, 0.0)


def full_alignment_loss(r, r_star, mask: WeightMask) -> float:
    """Squared Frobenius norm of the weighted residual over all entries."""
    a, b = _as_array(r), _as_array(r_star)
    if a.shape != b.shape or a.shape != mask.values.shape:
        raise ShapeMismatchError("loss operands disagree on shape")
    weighted = mask.values * (a - b)
    return float((weighted * weighted).sum())


def block_alignment_loss(r, r_star, mask: WeightMask) -> float:
    """Weighted squared residual restricted to within-cluster entries."""
    a, b = _as_array(r), _as_array(r_star)
    if a.shape != b.shape or a.shape != mask.values.shape:
        raise ShapeMismatchError("loss operands disagree on shape")
    block = mask.partition.block_mask()
    weighted = np.where(block, mask.values * (a - b), 0.0)
    return float((weighted * weighted).sum())


def decompose_consensus(r_star, partition: LabelPartition) -> BlockDecomposition:
    """B keeps within-cluster consensus entries, E the rest; B + E = R*."""
    arr = _as_array(r_star)
    b = project_block_diagonal(arr, partition)
    return BlockDecomposition(in_block=b, cross_block=arr - b, partition=partition)


@dataclass(frozen=True)
class GdTrajectory:
    """Iterates and objective values of one exact gradient-descent run."""

    objective: str
    iterates: list
    objectives: np.ndarray
    eta: float

    def to_csv(self, path) -> None:
        steps = np.arange(len(self.objectives))
        np.savetxt(
            path,
            np.column_stack([steps, self.objectives]),
            delimiter=",",
            header="step,objective",
            comments="",
            fmt=("%d", "%.17g"),
        )


def max_stable_stepsize(mask: WeightMask) -> float:
    return 1.0 / (2.0 * float((mask.values ** 2).max()))


def gd_run(objective: str, r0, r_star, mask: WeightMask, eta: float, steps: int) -> GdTrajectory:
    """Exact gradient descent on the chosen quadratic.

    Block runs start from the projection of r0 onto the block-diagonal
    subspace and stay there (cross-cluster coordinates have zero gradient).
    The stepsize must satisfy eta <= 1 / (2 max weight^2).
    """
    if objective not in ("full", "block"):
        raise ValueError(f"objective must be 'full' or 'block', got {objective!r}")
    limit = max_stable_stepsize(mask)
    if eta > limit * (1 + 1e-12):
        raise StepSizeError(f"eta {eta} exceeds stability limit {limit}")
    target = _as_array(r_star)
    current = _as_array(r0).copy()
    gamma_sq = mask.values ** 2
    if objective == "block":
        block = mask.partition.block_mask()
        current = np.where(block, current, 0.0)
        target_eff = np.where(block, target, 0.0)
        grad_mask = block
        loss = lambda m: block_alignment_loss(m, target, mask)
    else:
        target_eff = target
        grad_mask = np.ones_like(gamma_sq, dtype=bool)
        loss = lambda m: full_alignment_loss(m, target, mask)

    iterates = [current.copy()]
    objectives = [loss(current)]
    for _ in range(steps):
        grad = 2.0 * gamma_sq * (current - target_eff)
        grad = np.where(grad_mask, grad, 0.0)
        current = current - eta * grad
        iterates.append(current.copy())
        objectives.append(loss(current))
    return GdTrajectory(objective=objective, iterates=iterates, objectives=np.asarray(objectives), eta=eta)


def contraction_factors(mask: WeightMask, eta: float):
    """Worst-case per-step residual factors (block objective, full objective)."""
    gamma_sq = mask.values ** 2
    block = mask.partition.block_mask()
    worst_block = float((1.0 - 2.0 * eta * gamma_sq[block]).max())
    worst_full = float((1.0 - 2.0 * eta * gamma_sq).max())
    return worst_block, worst_full


def theorem2_check(r_blk, r_star, mask: WeightMask):
    """Evaluate both objectives and the masked cross-cluster consensus mass.

    The argument must be supported on the within-cluster pairs; the caller
    asserts full == block + cross_term.
    """
    arr = _as_array(r_blk)
    block = mask.partition.block_mask()
    if np.any(arr[~block] != 0.0):
        raise SupportViolationError("matrix has mass outside the block-diagonal subspace")
    f_full = full_alignment_loss(arr, r_star, mask)
    f_blk = block_alignment_loss(arr, r_star, mask)
    decomp = decompose_consensus(r_star, mask.partition)
    weighted_e = np.where(block, 0.0, mask.values * decomp.cross_block)
    cross_term = float((weighted_e * weighted_e).sum())
    return f_full, f_blk, cross_term


# ---------------------------------------------------------------------------
# Training-time loss on prediction scores
# ---------------------------------------------------------------------------

def local_alignment_loss_and_grad(
    preds: PredictionMatrix,
    r_star,
    spec: AlignmentLossSpec,
    epsilon: float = DEFAULT_EPSILON,
):
    """Alignment loss on a score matrix and its gradient w.r.t. the scores.

    loss = lam * sum of squared (R(F) - R*) entries, either over all label
    pairs (no partition) or within clusters only. The teacher R* is a
    constant: no gradient flows into it.

    With a partition set, per-cluster score slices are processed separately,
    so cost scales with the number of within-cluster pairs rather than C^2.
    """
    target = _as_array(r_star)
    c = preds.n_labels
    if target.shape != (c, c):
        raise ShapeMismatchError(f"teacher shape {target.shape}, expected {(c, c)}")
    if spec.lam == 0.0:
        return 0.0, np.zeros_like(preds.scores)

    if spec.partition is None:
        resid = phi_values(preds.scores, epsilon) - target
        loss = spec.lam * float((resid * resid).sum())
        grad = vjp_values(preds.scores, 2.0 * spec.lam * resid, epsilon)
        return loss, grad

    if spec.partition.n_labels != c:
        raise ShapeMismatchError("partition does not match label count")
    loss = 0.0
    grad = np.zeros_like(preds.scores)
    for members in spec.partition.clusters:
        idx = list(members)
        sub = preds.scores[:, idx]
        resid = phi_values(sub, epsilon) - target[np.ix_(idx, idx)]
        loss += spec.lam * float((resid * resid).sum())
        grad[:, idx] += vjp_values(sub, 2.0 * spec.lam * resid, epsilon)
    return loss, grad


def benchmark_alignment_step(
    n_labels: int,
    n_clusters: int,
    n_instances: int,
    repeats: int = 30,
    seed: int = 0,
):
    """Median wall-clock of one loss+gradient evaluation, full vs block.

    Returns a dict with per-step seconds and their ratio; used by the
    verification command to document the speedup of block restriction.
    """
    rng = stream(seed, "bench")
    scores = rng.uniform(0.05, 0.95, size=(n_instances, n_labels))
    preds = PredictionMatrix(scores)
    target = rng.uniform(-0.5, 0.5, size=(n_labels, n_labels))
    target = (target + target.T) / 2
    chunk = n_labels // n_clusters
    clusters = tuple(
        tuple(range(g * chunk, (g + 1) * chunk if g < n_clusters - 1 else n_labels))
        for g in range(n_clusters)
    )
    partition = LabelPartition(clusters, n_labels)
    spec_full = AlignmentLossSpec(lam=0.1, partition=None)
    spec_block = AlignmentLossSpec(lam=0.1, partition=partition)

    def timed(spec):
        # warmup
        local_alignment_loss_and_grad(preds, target, spec)
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            local_alignment_loss_and_grad(preds, target, spec)
            samples.append(time.perf_counter() - t0)
        return float(np.median(samples))

    full_s = timed(spec_full)
    block_s = timed(spec_block)
    return {
        "full_seconds": full_s,
        "block_seconds": block_s,
        "ratio": block_s / full_s,
        "n_labels": n_labels,
        "n_clusters": n_clusters,
        "n_instances": n_instances,
    }
