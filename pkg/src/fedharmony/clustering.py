"""Label clustering by spectral partitioning of the consensus correlation.

Pipeline: absolute-value affinity with zero diagonal, symmetric normalized
Laplacian (with a pseudo-inverse convention for zero-degree labels), embedding
into the eigenvectors of the smallest eigenvalues, row normalization, then
k-means. All randomness comes from an explicit seed, k-means ties are broken
by restart index, and eigenvector signs are fixed deterministically, so a
given (matrix, G, seed) always yields the same partition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corrstats import CorrelationMatrix
from .errors import InvalidClusterCountError, ShapeMismatchError
from .seeding import stream

_DEGREE_FLOOR = 1e-12
_KMEANS_RESTARTS = 10
_KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric nonnegative matrix with zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeMismatchError(f"affinity must be square, got {v.shape}")
        if v.min() < 0:
            raise ValueError("affinity entries must be nonnegative")
        if np.any(np.diag(v) != 0):
            raise ValueError("affinity diagonal must be zero")
        if not np.array_equal(v, v.T):
            raise ValueError("affinity must be exactly symmetric")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LabelPartition:
    """Disjoint nonempty clusters covering all label indices."""

    clusters: tuple
    n_labels: int

    def __post_init__(self):
        clusters = tuple(tuple(sorted(int(i) for i in c)) for c in self.clusters)
        flat = [i for c in clusters for i in c]
        if sorted(flat) != list(range(self.n_labels)):
            raise ValueError("clusters must partition the label set exactly")
        if any(len(c) == 0 for c in clusters):
            raise ValueError("clusters must be nonempty")
        object.__setattr__(self, "clusters", clusters)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def labels(self) -> np.ndarray:
        """Cluster index per label, length n_labels."""
        out = np.empty(self.n_labels, dtype=int)
        for g, members in enumerate(self.clusters):
            out[list(members)] = g
        return out

    def block_mask(self) -> np.ndarray:
        """Boolean C x C mask of within-cluster pairs (diagonal included)."""
        lab = self.labels()
        return lab[:, None] == lab[None, :]

    def to_json(self) -> str:
        return json.dumps({"clusters": [list(c) for c in self.clusters]})

    @staticmethod
    def from_json(text: str) -> "LabelPartition":
        data = json.loads(text)
        clusters = [tuple(c) for c in data["clusters"]]
        n = sum(len(c) for c in clusters)
        return LabelPartition(tuple(clusters), n)

    @staticmethod
    def single_cluster(n_labels: int) -> "LabelPartition":
        return LabelPartition((tuple(range(n_labels)),), n_labels)


def build_affinity(r_star: CorrelationMatrix) -> AffinityMatrix:
    """Elementwise |R| symmetrized, diagonal zeroed."""
    r = r_star.values
    s = (np.abs(r) + np.abs(r).T) / 2.0
    np.fill_diagonal(s, 0.0)
    return AffinityMatrix(s)


def normalized_laplacian(affinity: AffinityMatrix) -> np.ndarray:
    """Symmetric normalized Laplacian D^{-1/2} (D - S) D^{-1/2}.

    Labels whose degree is below the floor get a zero scaling factor
    (pseudo-inverse convention), which leaves their row and column zero.
    """
    s = affinity.values
    deg = s.sum(axis=1)
    inv_sqrt = np.where(deg > _DEGREE_FLOOR, 1.0 / np.sqrt(np.where(deg > _DEGREE_FLOOR, deg, 1.0)), 0.0)
    lap = -s * np.outer(inv_sqrt, inv_sqrt)
    np.fill_diagonal(lap, np.where(deg > _DEGREE_FLOOR, 1.0, 0.0))
    return (lap + lap.T) / 2.0


def _fix_eigenvector_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its first component of nonnegligible size is positive."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def spectral_embedding(lap: np.ndarray, g: int) -> np.ndarray:
    """Rows are labels embedded in the G lowest eigenvectors, row-normalized."""
    eigvals, eigvecs = np.linalg.eigh(lap)
    del eigvals
    u = _fix_eigenvector_signs(eigvecs[:, :g])
    norms = np.linalg.norm(u, axis=1)
    safe = np.where(norms > 1e-12, norms, 1.0)
    return u / safe[:, None]


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator):
    n = points.shape[0]
    # k-means++ seeding
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))

    assign = np.zeros(n, dtype=int)
    for _ in range(_KMEANS_MAX_ITER):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        for j in range(k):
            members = points[new_assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # Re-seed an empty center at the point farthest from its center.
                far = int(dists.min(axis=1).argmax())
                centers[j] = points[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    inertia = ((points - centers[assign]) ** 2).sum()
    return assign, float(inertia)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Best of several k-means++ restarts; ties broken by restart index."""
    best_assign, best_inertia = None, np.inf
    for _ in range(_KMEANS_RESTARTS):
        assign, inertia = _kmeans_once(points, k, rng)
        if inertia < best_inertia:
            best_assign, best_inertia = assign, inertia
    return best_assign


def _assignment_to_partition(assign: np.ndarray, g: int, points: np.ndarray) -> list:
    """Nonempty clusters from a k-means assignment, splitting as needed to reach g."""
    clusters = [list(np.flatnonzero(assign == j)) for j in range(g)]
    clusters = [c for c in clusters if c]
    while len(clusters) < g:
        sizes = [len(c) for c in clusters]
        big = int(np.argmax(sizes))
        members = clusters[big]
        center = points[members].mean(axis=0)
        dist = ((points[members] - center) ** 2).sum(axis=1)
        far_idx = int(np.argmax(dist))
        moved = members.pop(far_idx)
        clusters.append([moved])
    return clusters


def spectral_cluster(r_star: CorrelationMatrix, g: int, seed: int) -> LabelPartition:
    """Partition the labels into g clusters from the consensus correlation."""
    c = r_star.n_labels
    if not 1 <= g <= c:
        raise InvalidClusterCountError(f"G must be in [1, {c}], got {g}")
    if g == 1:
        return LabelPartition.single_cluster(c)
    affinity = build_affinity(r_star)
    lap = normalized_laplacian(affinity)
    points = spectral_embedding(lap, g)
    rng = stream(seed, "kmeans")
    assign = kmeans(points, g, rng)

    # Isolated labels carry no affinity signal; reattach each to the cluster
    # with the highest mean affinity (ties fall to the lowest cluster index).
    deg = affinity.values.sum(axis=1)
    isolated = np.flatnonzero(deg <= _DEGREE_FLOOR)
    if isolated.size and isolated.size < c:
        for i in isolated:
            means = np.array([
                affinity.values[i, assign == j].mean() if np.any(assign == j) else -1.0
                for j in range(g)
            ])
            assign[i] = int(means.argmax())

    clusters = _assignment_to_partition(assign, g, points)
    return LabelPartition(tuple(tuple(cl) for cl in clusters), c)


def suggest_num_clusters(r_star: CorrelationMatrix, max_g: int = 16) -> int:
    """Largest-eigengap heuristic over the leading Laplacian spectrum."""
    lap = normalized_laplacian(build_affinity(r_star))
    eigvals = np.linalg.eigvalsh(lap)
    m = min(r_star.n_labels, max_g)
    gaps = np.diff(eigvals[:m])
    if gaps.size == 0:
        return 1
    return int(np.argmax(gaps)) + 1


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two flat cluster labelings."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ShapeMismatchError("labelings must have equal length")
    n = a.size
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, b_idx.max() + 1))
    np.add.at(table, (a_idx, b_idx), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
