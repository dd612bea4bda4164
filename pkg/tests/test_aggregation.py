import numpy as np
import pytest

from fedharmony.aggregation import (
    QualitySchedule,
    aggregate_parameters,
    aggregation_weights,
    mixing_coefficient,
    quality_score,
    structural_discrepancy,
)
from fedharmony.alignment import uniform_mask
from fedharmony.clustering import LabelPartition
from fedharmony.errors import EmptyInputError, ShapeMismatchError, WeightSumError


def two_cluster_partition(c):
    half = c // 2
    return LabelPartition((tuple(range(half)), tuple(range(half, c))), c)


# ---------------------------------------------------------------------------
# structural_discrepancy
# ---------------------------------------------------------------------------

def test_discrepancy_zero_at_consensus():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(4, 4))
    m = (m + m.T) / 2
    mask = uniform_mask(two_cluster_partition(4))
    assert structural_discrepancy(m, m, mask) == 0.0


def test_discrepancy_single_pair():
    part = two_cluster_partition(4)
    mask = uniform_mask(part, 1.0, 0.0)
    a = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = 0.3
    assert structural_discrepancy(a, np.zeros((4, 4)), mask) == pytest.approx(0.18, rel=1e-12)


def test_discrepancy_consistent_with_alignment_loss():
    # Same quantity the local alignment loss computes at lambda = 1 with hard
    # scores reproducing the matrices — checked against the block loss proper.
    rng = np.random.default_rng(1)
    part = two_cluster_partition(6)
    mask = uniform_mask(part)
    a = rng.normal(size=(6, 6))
    a = (a + a.T) / 2
    b = rng.normal(size=(6, 6))
    b = (b + b.T) / 2
    block = part.block_mask()
    oracle = float(np.sum(np.where(block, a - b, 0.0) ** 2))
    assert structural_discrepancy(a, b, mask) == pytest.approx(oracle, rel=1e-12)


# ---------------------------------------------------------------------------
# quality_score / mixing_coefficient
# ---------------------------------------------------------------------------

def test_quality_at_zero():
    assert quality_score(0.0, 5.0) == 1.0


def test_quality_frozen_exponential():
    assert quality_score(1.0, 1.0) == pytest.approx(0.36787944117144233, abs=1e-16)


def test_quality_monotone():
    rng = np.random.default_rng(2)
    s = np.sort(rng.uniform(0, 3, size=10))
    q = [quality_score(x, 2.0) for x in s]
    assert all(q[i] > q[i + 1] for i in range(9) if s[i] < s[i + 1])


def test_mixing_schedule():
    assert mixing_coefficient(0, 10) == 1.0
    assert mixing_coefficient(5, 10) == 0.5
    assert mixing_coefficient(10, 10) == 0.0
    assert mixing_coefficient(25, 10) == 0.0


# ---------------------------------------------------------------------------
# aggregation_weights
# ---------------------------------------------------------------------------

def test_round_zero_is_size_weighting():
    sched = QualitySchedule(gamma_q=5.0, t0=10)
    w = aggregation_weights([(0, 10, 0.9), (1, 30, 0.0)], t=0, schedule=sched)
    assert w.per_client[0].weight == 0.25
    assert w.per_client[1].weight == 0.75


def test_pure_quality_regime_frozen_logistic():
    # Two clients with s = (0, 1/gamma_q): qualities (1, e^-1).
    sched = QualitySchedule(gamma_q=1.0, t0=5)
    w = aggregation_weights([(0, 7, 0.0), (1, 7, 1.0)], t=5, schedule=sched)
    assert w.per_client[0].weight == pytest.approx(0.7310585786300049, abs=1e-12)
    assert w.per_client[1].weight == pytest.approx(0.26894142136999512, abs=1e-12)


def test_symmetric_clients_uniform_at_every_round():
    sched = QualitySchedule(gamma_q=3.0, t0=4)
    for t in range(8):
        w = aggregation_weights([(0, 5, 0.4), (1, 5, 0.4), (2, 5, 0.4)], t, sched)
        np.testing.assert_allclose(w.as_array(), 1 / 3, rtol=1e-15)


def test_weights_convex_for_all_rounds():
    rng = np.random.default_rng(3)
    sched = QualitySchedule(gamma_q=5.0, t0=7)
    for t in [0, 1, 3, 7, 20]:
        parts = [(i, int(rng.integers(1, 100)), float(rng.uniform(0, 2))) for i in range(6)]
        w = aggregation_weights(parts, t, sched)
        arr = w.as_array()
        assert arr.min() >= 0
        assert arr.sum() == pytest.approx(1.0, abs=1e-12)


def test_higher_discrepancy_lowers_weight_after_t0():
    sched = QualitySchedule(gamma_q=5.0, t0=3)
    base = aggregation_weights([(0, 10, 0.5), (1, 10, 0.5)], t=3, schedule=sched)
    worse = aggregation_weights([(0, 10, 0.8), (1, 10, 0.5)], t=3, schedule=sched)
    assert worse.per_client[0].weight < base.per_client[0].weight


def test_empty_participants():
    with pytest.raises(EmptyInputError):
        aggregation_weights([], 0, QualitySchedule())


# ---------------------------------------------------------------------------
# aggregate_parameters
# ---------------------------------------------------------------------------

def test_single_client_passthrough():
    theta = np.arange(6.0).reshape(2, 3)
    out = aggregate_parameters([(theta, 1.0)])
    np.testing.assert_array_equal(out, theta)


def test_identical_parameters():
    theta = np.ones((3, 2))
    out = aggregate_parameters([(theta, 0.5), (theta, 0.5)])
    np.testing.assert_array_equal(out, theta)


def test_matches_elementwise_oracle():
    rng = np.random.default_rng(4)
    thetas = [rng.normal(size=(4, 3)) for _ in range(3)]
    w = np.array([0.2, 0.5, 0.3])
    out = aggregate_parameters(list(zip(thetas, w)))
    oracle = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            oracle[i, j] = sum(w[k] * thetas[k][i, j] for k in range(3))
    np.testing.assert_allclose(out, oracle, rtol=1e-15)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    thetas = [rng.normal(size=(5,)) for _ in range(4)]
    w = [0.1, 0.2, 0.3, 0.4]
    a = aggregate_parameters(list(zip(thetas, w)))
    order = [2, 0, 3, 1]
    b = aggregate_parameters([(thetas[i], w[i]) for i in order])
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_weight_sum_violation():
    with pytest.raises(WeightSumError):
        aggregate_parameters([(np.ones(2), 0.7), (np.ones(2), 0.7)])


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        aggregate_parameters([(np.ones(2), 0.5), (np.ones(3), 0.5)])
