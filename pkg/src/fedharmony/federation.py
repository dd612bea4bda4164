"""Round-based federated simulation engine.

Each round: sample participants, broadcast the global model, train locally
(binary cross-entropy plus, when enabled, the correlation-alignment term
against the client's leave-one-out consensus teacher), upload parameters and
correlation matrices, refresh the consensus, score structural quality, and
aggregate. The local model is a per-label linear classifier with sigmoid
outputs; mechanisms here operate on predictions and parameters generically.

Only (parameters, correlation matrix, sample count) ever cross the
client/server boundary. Clients may train concurrently inside a round; every
client draws from its own RNG stream keyed by (seed, client, round), so
results are independent of scheduling and worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import QualitySchedule, aggregation_weights, aggregate_parameters
from .alignment import AlignmentLossSpec, local_alignment_loss_and_grad, uniform_mask
from .clustering import LabelPartition, spectral_cluster, suggest_num_clusters
from .consensus import ClientCorrelationSet, ClientUpload, consensus_drift, leave_one_out_consensus
from .corrstats import CorrelationMatrix, PredictionMatrix, correlation_matrix
from .datagen import FederatedDataset
from .errors import DivergenceError, InsufficientPeersError
from .metrics import MetricReport, report
from .seeding import stream


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy over all instance-label cells, from scores."""
    eps = 1e-12
    s = np.clip(scores, eps, 1.0 - eps)
    return float(-(labels * np.log(s) + (1 - labels) * np.log(1 - s)).mean())


@dataclass(frozen=True)
class LinearModel:
    """Per-label linear classifier: sigmoid(X @ weights + bias)."""

    weights: np.ndarray  # (d, C)
    bias: np.ndarray  # (C,)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(x @ self.weights + self.bias)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @staticmethod
    def from_vector(vec: np.ndarray, n_features: int, n_labels: int) -> "LinearModel":
        split = n_features * n_labels
        return LinearModel(
            weights=vec[:split].reshape(n_features, n_labels).copy(),
            bias=vec[split:].copy(),
        )

    @staticmethod
    def initial(n_features: int, n_labels: int, seed: int) -> "LinearModel":
        rng = stream(seed, "init")
        return LinearModel(
            weights=rng.normal(0.0, 0.01, size=(n_features, n_labels)),
            bias=np.zeros(n_labels),
        )


@dataclass
class ClientState:
    client_id: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0] or self.features.shape[0] < 1:
            raise ValueError("client needs matching nonempty features and labels")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class GlobalModel:
    model: LinearModel
    round: int


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 30
    local_epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 0.05
    participation_ratio: float = 1.0
    sampling_mode: str = "size_proportional"
    lam: float = 0.1
    epsilon: float = 1e-8
    gamma_q: float = 5.0
    t0: int = 10
    n_clusters: int | None = None  # None: eigengap heuristic per teacher
    use_alignment: bool = True
    use_caa: bool = True
    use_blocks: bool = True
    consensus_mode: str = "size_weighted"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.participation_ratio <= 1:
            raise ValueError("participation_ratio must lie in (0, 1]")
        if self.sampling_mode not in ("uniform", "size_proportional"):
            raise ValueError(f"unknown sampling mode {self.sampling_mode!r}")
        if self.rounds < 0 or self.local_epochs < 0:
            raise ValueError("rounds and local_epochs must be nonnegative")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate and batch_size must be positive")

    def schedule(self) -> QualitySchedule:
        return QualitySchedule(gamma_q=self.gamma_q, t0=self.t0)


@dataclass(frozen=True)
class ClientRoundStats:
    client_id: int
    n_samples: int
    loss_bce: float
    loss_align: float
    discrepancy: float | None
    n_bar: float
    q_bar: float
    weight: float
    drift: float | None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    participants: tuple
    clients: tuple  # ClientRoundStats
    drift_mean: float | None
    drift_sum: float | None
    metrics: MetricReport | None
    timings: dict = field(compare=False)

    def payload(self) -> dict:
        """Deterministic content; timing fields are excluded on purpose."""
        data = {
            "round": self.round,
            "participants": list(self.participants),
            "clients": [
                {
                    "client_id": c.client_id,
                    "n": c.n_samples,
                    "loss_bce": c.loss_bce,
                    "loss_align": c.loss_align,
                    "s": c.discrepancy,
                    "n_bar": c.n_bar,
                    "q_bar": c.q_bar,
                    "w": c.weight,
                    "drift": c.drift,
                }
                for c in self.clients
            ],
            "drift_mean": self.drift_mean,
            "drift_sum": self.drift_sum,
        }
        if self.metrics is not None:
            data["metrics"] = {f: getattr(self.metrics, f) for f in MetricReport.FIELDS}
        return data

    def to_json(self) -> str:
        data = self.payload()
        data["timings"] = {k: round(v, 6) for k, v in self.timings.items()}
        return json.dumps(data, sort_keys=True)

    def replay_digest(self) -> str:
        """Hash of everything except wall-clock timings."""
        blob = json.dumps(self.payload(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def sample_clients(states, ratio: float, mode: str, rng: np.random.Generator):
    """Choose ceil(ratio * K) distinct clients; proportional mode weights by size."""
    ids = np.array(sorted(s.client_id for s in states))
    k = len(ids)
    m = max(1, math.ceil(ratio * k))
    if mode == "uniform":
        chosen = rng.choice(ids, size=m, replace=False)
    else:
        counts = np.array([s.n_samples for s in sorted(states, key=lambda s: s.client_id)], dtype=float)
        chosen = rng.choice(ids, size=m, replace=False, p=counts / counts.sum())
    return set(int(i) for i in chosen)


def _teacher_partition(teacher: CorrelationMatrix, config: FederationConfig, t: int, client_id: int):
    g = config.n_clusters or suggest_num_clusters(teacher)
    g = max(1, min(g, teacher.n_labels))
    seed_int = int(stream(config.seed, "spectral", t, client_id).integers(2**31))
    return spectral_cluster(teacher, g, seed=seed_int)


def local_train(
    state: ClientState,
    model: LinearModel,
    teacher: CorrelationMatrix | None,
    config: FederationConfig,
    round_index: int,
    partition: LabelPartition | None = None,
):
    """Mini-batch SGD on BCE, plus one full-batch alignment step per epoch.

    The alignment term is evaluated on full-batch predictions and its gradient
    is added to the epoch's final mini-batch step; the teacher is a constant.
    Returns (model, correlation matrix of final predictions, diagnostics).
    """
    x, y = state.features, state.labels.astype(float)
    n, c = y.shape
    w = model.weights.copy()
    b = model.bias.copy()
    rng = stream(config.seed, "client", state.client_id, round_index)
    align_active = (
        config.use_alignment and teacher is not None and config.lam > 0 and config.local_epochs > 0
    )
    spec = AlignmentLossSpec(
        lam=config.lam,
        partition=partition if (align_active and config.use_blocks) else None,
    )
    loss_align = 0.0
    loss_hist = []
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        starts = range(0, n, config.batch_size)
        n_batches = len(starts)
        for bi, start in enumerate(starts):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            p = sigmoid(xb @ w + b)
            g = (p - yb) / (len(idx) * c)
            gw = xb.T @ g
            gb = g.sum(axis=0)
            if align_active and bi == n_batches - 1:
                scores = sigmoid(x @ w + b)
                loss_align, df = local_alignment_loss_and_grad(
                    PredictionMatrix(scores), teacher.values, spec, config.epsilon
                )
                dz = df * scores * (1.0 - scores)
                gw += x.T @ dz
                gb += dz.sum(axis=0)
            w -= config.learning_rate * gw
            b -= config.learning_rate * gb
        epoch_loss = bce_loss(sigmoid(x @ w + b), y)
        loss_hist.append(epoch_loss)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(state.client_id, round_index, f"BCE={epoch_loss}")
    if not (np.isfinite(w).all() and np.isfinite(b).all()):
        raise DivergenceError(state.client_id, round_index, "non-finite parameters")
    trained = LinearModel(weights=w, bias=b)
    final_scores = trained.predict(x)
    r_new = correlation_matrix(PredictionMatrix(final_scores), config.epsilon)
    diagnostics = {
        "loss_bce": bce_loss(final_scores, y),
        "loss_align": float(loss_align),
        "epoch_bce": loss_hist,
    }
    return trained, r_new, diagnostics


@dataclass
class ServerState:
    model: GlobalModel
    uploads: dict  # client_id -> ClientUpload


def _consensus_for(server: ServerState, client_id: int, t: int, mode: str):
    entries = list(server.uploads.values())
    if not entries:
        return None
    cset = ClientCorrelationSet(entries=entries, round=t)
    try:
        return leave_one_out_consensus(cset, exclude=client_id, mode=mode)
    except InsufficientPeersError:
        return None


def run_round(server: ServerState, states, config: FederationConfig, t: int,
              test_data=None, matrix_sink=None) -> tuple:
    """One communication round; returns (GlobalModel, RoundRecord).

    `matrix_sink(t, client_matrices, consensus_matrices)` is called, when
    given, with the round's uploaded correlation matrices and the fresh
    leave-one-out consensus per participant.
    """
    timings = {}
    tic = time.perf_counter()
    by_id = {s.client_id: s for s in states}
    rng_sample = stream(config.seed, "sample", t)
    participants = sorted(
        sample_clients(states, config.participation_ratio, config.sampling_mode, rng_sample)
    )

    teachers = {}
    partitions = {}
    for cid in participants:
        teacher = _consensus_for(server, cid, t, config.consensus_mode) if config.use_alignment else None
        teachers[cid] = teacher
        if teacher is not None and config.use_blocks:
            partitions[cid] = _teacher_partition(teacher, config, t, cid)
        else:
            partitions[cid] = None
    timings["consensus_s"] = time.perf_counter() - tic

    tic = time.perf_counter()

    def train_one(cid):
        return local_train(
            by_id[cid], server.model.model, teachers[cid], config, t, partitions[cid]
        )

    if config.threads > 1 and len(participants) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = dict(zip(participants, pool.map(train_one, participants)))
    else:
        results = {cid: train_one(cid) for cid in participants}
    timings["train_s"] = time.perf_counter() - tic

    tic = time.perf_counter()
    for cid in participants:
        _, r_new, _ = results[cid]
        server.uploads[cid] = ClientUpload(
            client_id=cid, matrix=r_new, sample_count=by_id[cid].n_samples, round_produced=t
        )

    # Fresh leave-one-out consensus for quality scoring and drift tracking.
    discrepancies = {}
    drifts = {}
    fresh_consensus = {}
    for cid in participants:
        fresh = _consensus_for(server, cid, t, config.consensus_mode)
        r_i = results[cid][1]
        if fresh is None:
            discrepancies[cid] = 0.0
            drifts[cid] = None
            continue
        fresh_consensus[cid] = fresh
        if config.use_blocks:
            part = _teacher_partition(fresh, config, t, cid)
        else:
            part = LabelPartition.single_cluster(fresh.n_labels)
        mask = uniform_mask(part)
        discrepancies[cid] = float(
            np.sum(np.where(part.block_mask(), r_i.values - fresh.values, 0.0) ** 2)
        )
        drifts[cid] = consensus_drift(r_i, fresh)

    if matrix_sink is not None:
        matrix_sink(t, {cid: results[cid][1] for cid in participants}, fresh_consensus)

    if config.use_caa:
        weights = aggregation_weights(
            [(cid, by_id[cid].n_samples, discrepancies[cid]) for cid in participants],
            t,
            config.schedule(),
        )
    else:
        weights = aggregation_weights(
            [(cid, by_id[cid].n_samples, 0.0) for cid in participants],
            0,  # always the pure size-weighted regime
            config.schedule(),
        )
    weight_by_id = {cw.client_id: cw for cw in weights.per_client}

    new_vector = aggregate_parameters(
        [(results[cid][0].as_vector(), weight_by_id[cid].weight) for cid in participants]
    )
    d, c = server.model.model.weights.shape
    new_model = LinearModel.from_vector(new_vector, d, c)
    timings["aggregate_s"] = time.perf_counter() - tic

    tic = time.perf_counter()
    snapshot = None
    if test_data is not None:
        x_test, y_test = test_data
        snapshot = report(new_model.predict(x_test), y_test)
    timings["evaluate_s"] = time.perf_counter() - tic

    drift_vals = [v for v in drifts.values() if v is not None]
    record = RoundRecord(
        round=t,
        participants=tuple(participants),
        clients=tuple(
            ClientRoundStats(
                client_id=cid,
                n_samples=by_id[cid].n_samples,
                loss_bce=results[cid][2]["loss_bce"],
                loss_align=results[cid][2]["loss_align"],
                discrepancy=discrepancies[cid],
                n_bar=weight_by_id[cid].n_bar,
                q_bar=weight_by_id[cid].q_bar,
                weight=weight_by_id[cid].weight,
                drift=drifts[cid],
            )
            for cid in participants
        ),
        drift_mean=float(np.mean(drift_vals)) if drift_vals else None,
        drift_sum=float(np.sum(drift_vals)) if drift_vals else None,
        metrics=snapshot,
        timings=timings,
    )
    updated = GlobalModel(model=new_model, round=t + 1)
    server.model = updated
    return updated, record


def run_federation(config: FederationConfig, dataset: FederatedDataset, matrix_sink=None):
    """Run all rounds; returns (records, final GlobalModel)."""
    states = [
        ClientState(client_id=c.client_id, features=c.features, labels=np.asarray(c.labels))
        for c in dataset.clients
    ]
    initial = LinearModel.initial(dataset.n_features, dataset.n_labels, config.seed)
    server = ServerState(model=GlobalModel(model=initial, round=0), uploads={})
    records = []
    test_data = (dataset.test_features, dataset.test_labels)
    for t in range(config.rounds):
        _, record = run_round(server, states, config, t, test_data=test_data, matrix_sink=matrix_sink)
        records.append(record)
    return records, server.model


def fedavg_config(config: FederationConfig) -> FederationConfig:
    """The same run with every mechanism disabled (plain size-weighted averaging)."""
    return replace(config, use_alignment=False, use_caa=False, use_blocks=False)
