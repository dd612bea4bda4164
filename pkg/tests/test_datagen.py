import numpy as np
import pytest

from fedharmony.clustering import adjusted_rand_index, spectral_cluster
from fedharmony.datagen import (
    SyntheticSpec,
    generate,
    label_correlation,
    load_dataset,
    partition_clients,
    plant_structure,
    save_dataset,
)


def small_spec(**overrides):
    base = dict(
        n_labels=12,
        n_features=16,
        n_blocks=3,
        in_block_strength=0.8,
        cross_block_strength=0.05,
        n_clients=6,
        dirichlet_gamma=0.5,
        samples_per_client=(40, 80),
        seed=0,
        test_samples=200,
        reference_samples=100_000,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        small_spec(in_block_strength=0.1, cross_block_strength=0.2)
    with pytest.raises(ValueError):
        small_spec(dirichlet_gamma=0.0)


def test_block_assignment_covers_labels():
    spec = small_spec(n_labels=10, n_blocks=3)
    blocks = spec.block_of_label()
    assert blocks.size == 10
    assert set(blocks) == {0, 1, 2}


# ---------------------------------------------------------------------------
# plant_structure
# ---------------------------------------------------------------------------

def test_zero_cross_strength_gives_block_diagonal_truth():
    spec = small_spec(cross_block_strength=0.0)
    _, truth = plant_structure(spec)
    blocks = spec.block_of_label()
    off = truth.values[blocks[:, None] != blocks[None, :]]
    assert np.abs(off).max() < 0.02


def test_single_block_all_positive_correlations():
    spec = small_spec(n_blocks=1, cross_block_strength=0.0)
    _, truth = plant_structure(spec)
    off_diag = truth.values[~np.eye(spec.n_labels, dtype=bool)]
    assert off_diag.min() > 0


def test_spectral_recovery_of_planted_blocks():
    spec = small_spec(cross_block_strength=0.0)
    _, truth = plant_structure(spec)
    part = spectral_cluster(truth, spec.n_blocks, seed=1)
    assert adjusted_rand_index(part.labels(), spec.block_of_label()) == 1.0


def test_in_block_correlations_dominate():
    spec = small_spec()
    _, truth = plant_structure(spec)
    blocks = spec.block_of_label()
    same = blocks[:, None] == blocks[None, :]
    off_diag_mask = ~np.eye(spec.n_labels, dtype=bool)
    in_vals = truth.values[same & off_diag_mask]
    out_vals = truth.values[~same]
    assert in_vals.min() > np.abs(out_vals).max()


# ---------------------------------------------------------------------------
# partition_clients
# ---------------------------------------------------------------------------

def test_reproducibility():
    spec = small_spec()
    a = generate(spec)
    b = generate(spec)
    for ca, cb in zip(a.clients, b.clients):
        np.testing.assert_array_equal(ca.features, cb.features)
        np.testing.assert_array_equal(ca.labels, cb.labels)
        np.testing.assert_array_equal(ca.exposure, cb.exposure)
    np.testing.assert_array_equal(a.test_features, b.test_features)
    np.testing.assert_array_equal(a.ground_truth_r.values, b.ground_truth_r.values)


def test_global_marginals_bounded():
    ds = generate(small_spec(dirichlet_gamma=0.25))
    freq = np.vstack([c.labels for c in ds.clients]).mean(axis=0)
    assert freq.min() >= 0.02
    assert freq.max() <= 0.98


def test_near_uniform_exposure_at_huge_gamma():
    spec = small_spec(dirichlet_gamma=1e6, n_clients=8)
    ds = generate(spec)
    for c in ds.clients:
        np.testing.assert_allclose(c.exposure, 1.0 / spec.n_blocks, atol=0.05)


def test_single_client_matches_ground_truth_at_large_sample():
    spec = small_spec(
        n_clients=1,
        dirichlet_gamma=1e6,
        samples_per_client=(30_000, 30_000),
    )
    model, truth = plant_structure(spec)
    ds = partition_clients(spec, model, truth)
    client_r = label_correlation(ds.clients[0].labels)
    gap = np.linalg.norm(client_r.values - truth.values) / np.linalg.norm(truth.values)
    assert gap < 0.05


def test_lower_gamma_increases_drift():
    # Paired seeds: stronger skew moves client matrices farther from the truth.
    wins = 0
    for seed in range(6):
        drifts = {}
        for gamma in (0.25, 1.0):
            spec = small_spec(dirichlet_gamma=gamma, seed=seed, n_clients=8)
            ds = generate(spec)
            truth = ds.ground_truth_r.values
            drifts[gamma] = np.mean([
                np.linalg.norm(label_correlation(c.labels).values - truth)
                for c in ds.clients
            ])
        if drifts[0.25] > drifts[1.0]:
            wins += 1
    assert wins >= 5


def test_test_split_has_expected_size_and_binary_labels():
    ds = generate(small_spec())
    assert ds.test_labels.shape == (200, 12)
    assert set(np.unique(ds.test_labels)) <= {0, 1}


def test_features_learnable_shape():
    ds = generate(small_spec())
    for c in ds.clients:
        assert c.features.shape == (c.n_samples, 16)


# ---------------------------------------------------------------------------
# save / load directory format
# ---------------------------------------------------------------------------

def test_roundtrip(tmp_path):
    ds = generate(small_spec(n_clients=3, test_samples=50))
    manifest = save_dataset(ds, tmp_path / "data")
    assert manifest.name == "manifest.json"
    back = load_dataset(manifest)
    assert len(back.clients) == 3
    for ca, cb in zip(ds.clients, back.clients):
        np.testing.assert_allclose(ca.features, cb.features, rtol=0, atol=0)
        np.testing.assert_array_equal(ca.labels, cb.labels)
    np.testing.assert_allclose(ds.ground_truth_r.values, back.ground_truth_r.values, rtol=0, atol=1e-16)
    assert back.spec == ds.spec


def test_save_deterministic_bytes(tmp_path):
    spec = small_spec(n_clients=2, test_samples=30)
    save_dataset(generate(spec), tmp_path / "a")
    save_dataset(generate(spec), tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
