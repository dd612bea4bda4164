"""Leave-one-out consensus over client correlation matrices.

Each round the server holds one correlation matrix per client that has
uploaded so far. For a given client the consensus is a convex combination of
every *other* client's matrix, symmetrized and clamped; it acts as that
client's teacher during the next local-training phase. Keeping the operator
linear means the triangle inequality gives an exact quality guarantee: the
consensus is never farther from any fixed target than the weighted average of
the peers' distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corrstats import CorrelationMatrix
from .errors import InsufficientPeersError, ShapeMismatchError

_MODES = ("uniform", "size_weighted")


@dataclass(frozen=True)
class ClientUpload:
    """One client's latest correlation matrix and its provenance."""

    client_id: int
    matrix: CorrelationMatrix
    sample_count: int
    round_produced: int = 0

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")


@dataclass(frozen=True)
class ClientCorrelationSet:
    """All uploads available to the server at a given round."""

    entries: list
    round: int = 0

    def __post_init__(self):
        ids = [e.client_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate client ids in correlation set")
        sizes = {e.matrix.n_labels for e in self.entries}
        if len(sizes) > 1:
            raise ShapeMismatchError(f"matrices disagree on label count: {sorted(sizes)}")

    @property
    def n_labels(self) -> int:
        return self.entries[0].matrix.n_labels


@dataclass(frozen=True)
class ConsensusMatrix(CorrelationMatrix):
    """Peer consensus for one client; `excluded_client` never contributed."""

    excluded_client: int = -1


def leave_one_out_consensus(
    cset: ClientCorrelationSet,
    exclude: int,
    mode: str = "size_weighted",
) -> ConsensusMatrix:
    """Convex combination of all peers' matrices, symmetrized and clamped.

    `uniform` weights every peer 1/(K-1); `size_weighted` weights peer j by
    n_j over the total peer sample count. Averaging valid matrices cannot
    leave [-1, 1]; the clamp only guards accumulated floating-point drift.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    peers = [e for e in cset.entries if e.client_id != exclude]
    if not peers:
        raise InsufficientPeersError(
            f"no peers available for client {exclude} at round {cset.round}"
        )
    if mode == "uniform":
        weights = np.full(len(peers), 1.0 / len(peers))
    else:
        counts = np.array([e.sample_count for e in peers], dtype=float)
        weights = counts / counts.sum()
    acc = np.zeros((cset.n_labels, cset.n_labels))
    for w, e in zip(weights, peers):
        acc += w * e.matrix.values
    acc = (acc + acc.T) / 2.0
    np.clip(acc, -1.0, 1.0, out=acc)
    return ConsensusMatrix(values=acc, epsilon=0.0, excluded_client=exclude)


def consensus_drift(r_local: CorrelationMatrix, r_star: CorrelationMatrix) -> float:
    """Frobenius distance between a client's matrix and its teacher."""
    a = r_local.values
    b = r_star.values
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
