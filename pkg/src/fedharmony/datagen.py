"""Synthetic federated multi-label data with a planted correlation structure.

Labels are grouped into latent blocks. Per instance, each block's activator
fires independently, and a label turns on through a noisy-OR over activators:
strongly through its own block, weakly (the leakage strength) through the
others, plus a small floor rate. Within-block labels share an activator and
co-occur; with zero leakage the population correlation matrix is exactly
block-diagonal up to sampling noise.

Clients differ by how often each block fires for them: per-client activation
rates are scaled by a Dirichlet draw over blocks, so small concentration
values give clients that mostly see a few blocks. That is what makes each
client's empirical label-correlation matrix drift away from the population
one. Features are sums of per-label Gaussian prototypes plus noise, so a
per-label linear classifier is learnable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corrstats import DEFAULT_EPSILON, CorrelationMatrix, phi_values
from .errors import DatasetError
from .seeding import stream

_FLOOR_RATE = 0.01
_BASE_ACTIVATION = 0.5
_ACTIVATION_MIN = 0.05
_ACTIVATION_MAX = 0.95
_MAX_RETRIES = 20


@dataclass(frozen=True)
class SyntheticSpec:
    n_labels: int = 24
    n_features: int = 32
    n_blocks: int = 3
    in_block_strength: float = 0.8
    cross_block_strength: float = 0.05
    n_clients: int = 16
    dirichlet_gamma: float = 0.25
    samples_per_client: tuple = (80, 240)
    seed: int = 0
    test_samples: int = 2000
    reference_samples: int = 100_000
    feature_noise: float = 0.3

    def __post_init__(self):
        if not 0 <= self.cross_block_strength <= 1 or not 0 <= self.in_block_strength <= 1:
            raise ValueError("strengths must lie in [0, 1]")
        if self.in_block_strength <= self.cross_block_strength:
            raise ValueError("in-block strength must exceed cross-block strength")
        if self.dirichlet_gamma <= 0:
            raise ValueError("dirichlet_gamma must be positive")
        if self.n_blocks < 1 or self.n_blocks > self.n_labels:
            raise ValueError("n_blocks must be in [1, n_labels]")
        lo, hi = self.samples_per_client
        if lo < 1 or hi < lo:
            raise ValueError("samples_per_client must be a nondecreasing positive range")

    def block_of_label(self) -> np.ndarray:
        """Contiguous equal-ish blocks covering all labels."""
        edges = np.linspace(0, self.n_labels, self.n_blocks + 1).astype(int)
        out = np.empty(self.n_labels, dtype=int)
        for g in range(self.n_blocks):
            out[edges[g]:edges[g + 1]] = g
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["samples_per_client"] = list(self.samples_per_client)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["samples_per_client"] = tuple(d["samples_per_client"])
        return SyntheticSpec(**d)


@dataclass(frozen=True)
class LatentLabelModel:
    """Sampler for the planted block-structured label distribution."""

    block_of_label: np.ndarray
    in_block_strength: float
    cross_block_strength: float
    prototypes: np.ndarray  # (C, d)
    feature_noise: float

    @property
    def n_blocks(self) -> int:
        return int(self.block_of_label.max()) + 1

    @property
    def n_labels(self) -> int:
        return self.block_of_label.size

    def sample_labels(self, n: int, rng: np.random.Generator, activation=None) -> np.ndarray:
        """Binary label matrix (n, C); `activation` is per-block firing rates."""
        g = self.n_blocks
        if activation is None:
            activation = np.full(g, _BASE_ACTIVATION)
        z = rng.random((n, g)) < np.asarray(activation)[None, :]

        with np.errstate(divide="ignore"):
            log_in = np.log1p(-self.in_block_strength)
            log_cross = np.log1p(-self.cross_block_strength)
        own = z[:, self.block_of_label]  # (n, C)
        total_active = z.sum(axis=1, keepdims=True)
        others = total_active - own
        log_keep_off = np.log1p(-_FLOOR_RATE) + own * log_in + others * log_cross
        p_on = 1.0 - np.exp(log_keep_off)
        return (rng.random((n, self.n_labels)) < p_on).astype(np.int8)

    def sample_features(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.normal(0.0, self.feature_noise, size=(labels.shape[0], self.prototypes.shape[1]))
        return labels @ self.prototypes + noise


@dataclass(frozen=True)
class ClientData:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    exposure: np.ndarray  # per-block Dirichlet proportions

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class FederatedDataset:
    clients: tuple
    test_features: np.ndarray
    test_labels: np.ndarray
    ground_truth_r: CorrelationMatrix
    spec: SyntheticSpec

    @property
    def n_labels(self) -> int:
        return self.test_labels.shape[1]

    @property
    def n_features(self) -> int:
        return self.test_features.shape[1]


def label_correlation(labels: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> CorrelationMatrix:
    """Phi correlation of hard 0/1 labels (the population-style estimator)."""
    return CorrelationMatrix(phi_values(np.asarray(labels, dtype=float), epsilon), epsilon)


def plant_structure(spec: SyntheticSpec):
    """Build the latent model and estimate its population correlation matrix.

    The reference estimate uses uniform block activation and at least 1e5
    samples, enough for off-block entries to be sampling noise only.
    """
    rng = stream(spec.seed, "plant")
    prototypes = rng.normal(0.0, 1.0, size=(spec.n_labels, spec.n_features)) / np.sqrt(spec.n_features)
    model = LatentLabelModel(
        block_of_label=spec.block_of_label(),
        in_block_strength=spec.in_block_strength,
        cross_block_strength=spec.cross_block_strength,
        prototypes=prototypes,
        feature_noise=spec.feature_noise,
    )
    ref_labels = model.sample_labels(max(spec.reference_samples, 100_000), stream(spec.seed, "reference"))
    return model, label_correlation(ref_labels)


def _client_activation(exposure: np.ndarray, n_blocks: int) -> np.ndarray:
    """Scale the base rate by block exposure, clipped to keep labels alive."""
    raw = _BASE_ACTIVATION * n_blocks * exposure
    return np.clip(raw, _ACTIVATION_MIN, _ACTIVATION_MAX)


def _sample_clients_once(spec: SyntheticSpec, model: LatentLabelModel, salt: int):
    rng_sizes = stream(spec.seed, "sizes", salt)
    rng_dirichlet = stream(spec.seed, "exposure", salt)
    lo, hi = spec.samples_per_client
    clients = []
    for k in range(spec.n_clients):
        n_k = int(rng_sizes.integers(lo, hi + 1))
        exposure = rng_dirichlet.dirichlet(np.full(spec.n_blocks, spec.dirichlet_gamma))
        activation = _client_activation(exposure, spec.n_blocks)
        rng_k = stream(spec.seed, "client-data", salt, k)
        labels = None
        for _ in range(_MAX_RETRIES):
            candidate = model.sample_labels(n_k, rng_k, activation)
            if candidate.sum() > 0:
                labels = candidate
                break
        if labels is None:
            raise DatasetError(f"client {k} produced no positive labels after retries")
        features = model.sample_features(labels, rng_k)
        clients.append(ClientData(client_id=k, features=features, labels=labels, exposure=exposure))
    return clients


def partition_clients(
    spec: SyntheticSpec,
    model: LatentLabelModel,
    ground_truth_r: CorrelationMatrix | None = None,
) -> FederatedDataset:
    """Sample per-client datasets, a disjoint test split, and the ground truth.

    If the union of client data leaves any label frequency outside
    [0.02, 0.98], the client sampling is redone with a fresh salt; the firing
    floor makes that rare.
    """
    clients = None
    for salt in range(_MAX_RETRIES):
        candidate = _sample_clients_once(spec, model, salt)
        freq = np.vstack([c.labels for c in candidate]).mean(axis=0)
        if freq.min() >= 0.02 and freq.max() <= 0.98:
            clients = candidate
            break
    if clients is None:
        raise DatasetError("global label frequencies failed to stay inside [0.02, 0.98]")

    rng_test = stream(spec.seed, "test")
    test_labels = model.sample_labels(spec.test_samples, rng_test)
    test_features = model.sample_features(test_labels, rng_test)
    if ground_truth_r is None:
        _, ground_truth_r = plant_structure(spec)
    return FederatedDataset(
        clients=tuple(clients),
        test_features=test_features,
        test_labels=test_labels,
        ground_truth_r=ground_truth_r,
        spec=spec,
    )


def generate(spec: SyntheticSpec) -> FederatedDataset:
    """plant_structure + partition_clients in one call."""
    model, ground_truth_r = plant_structure(spec)
    return partition_clients(spec, model, ground_truth_r)


# ---------------------------------------------------------------------------
# directory format: per-client CSV pairs plus a JSON manifest
# ---------------------------------------------------------------------------

def save_dataset(ds: FederatedDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "spec": ds.spec.to_dict(),
        "seed": ds.spec.seed,
        "n_clients": len(ds.clients),
        "ground_truth_r": "ground_truth_r.csv",
        "test": {"features": "test_features.csv", "labels": "test_labels.csv"},
        "clients": [],
    }
    for c in ds.clients:
        fx = f"client_{c.client_id:03d}_features.csv"
        fy = f"client_{c.client_id:03d}_labels.csv"
        np.savetxt(out / fx, c.features, delimiter=",", fmt="%.17g")
        np.savetxt(out / fy, c.labels, delimiter=",", fmt="%d")
        manifest["clients"].append(
            {
                "id": c.client_id,
                "features": fx,
                "labels": fy,
                "n": c.n_samples,
                "exposure": [float(x) for x in c.exposure],
            }
        )
    np.savetxt(out / "test_features.csv", ds.test_features, delimiter=",", fmt="%.17g")
    np.savetxt(out / "test_labels.csv", ds.test_labels, delimiter=",", fmt="%d")
    ds.ground_truth_r.to_csv(out / "ground_truth_r.csv")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out / "manifest.json"


def load_dataset(path) -> FederatedDataset:
    """Load any dataset conforming to the manifest schema."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    manifest = json.loads((root / "manifest.json").read_text())
    spec = SyntheticSpec.from_dict(manifest["spec"])
    clients = []
    for entry in manifest["clients"]:
        features = np.loadtxt(root / entry["features"], delimiter=",", ndmin=2)
        labels = np.loadtxt(root / entry["labels"], delimiter=",", ndmin=2).astype(np.int8)
        clients.append(
            ClientData(
                client_id=int(entry["id"]),
                features=features,
                labels=labels,
                exposure=np.asarray(entry.get("exposure", []), dtype=float),
            )
        )
    test_features = np.loadtxt(root / manifest["test"]["features"], delimiter=",", ndmin=2)
    test_labels = np.loadtxt(root / manifest["test"]["labels"], delimiter=",", ndmin=2).astype(np.int8)
    ground = CorrelationMatrix.from_csv(root / manifest["ground_truth_r"])
    return FederatedDataset(
        clients=tuple(clients),
        test_features=test_features,
        test_labels=test_labels,
        ground_truth_r=ground,
        spec=spec,
    )
