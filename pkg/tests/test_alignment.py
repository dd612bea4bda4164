import numpy as np
import pytest

from fedharmony.alignment import (
    AlignmentLossSpec,
    WeightMask,
    benchmark_alignment_step,
    block_alignment_loss,
    contraction_factors,
    decompose_consensus,
    full_alignment_loss,
    gd_run,
    local_alignment_loss_and_grad,
    max_stable_stepsize,
    project_block_diagonal,
    theorem2_check,
    uniform_mask,
)
from fedharmony.clustering import LabelPartition
from fedharmony.corrstats import PredictionMatrix
from fedharmony.errors import StepSizeError, SupportViolationError


def sym(rng, c, scale=1.0):
    m = rng.normal(0, scale, size=(c, c))
    return (m + m.T) / 2


def random_mask(rng, partition, lo_in=0.5, hi_in=1.5, hi_out=0.4):
    c = partition.n_labels
    block = partition.block_mask()
    vals = np.where(block, rng.uniform(lo_in, hi_in, size=(c, c)), rng.uniform(0.0, hi_out, size=(c, c)))
    vals = (vals + vals.T) / 2
    return WeightMask(values=vals, partition=partition)


def two_cluster_partition(c):
    half = c // 2
    return LabelPartition((tuple(range(half)), tuple(range(half, c))), c)


# ---------------------------------------------------------------------------
# projector
# ---------------------------------------------------------------------------

def test_projector_single_cluster_is_identity():
    rng = np.random.default_rng(0)
    m = sym(rng, 5)
    part = LabelPartition.single_cluster(5)
    np.testing.assert_array_equal(project_block_diagonal(m, part), m)


def test_projector_singletons_keep_diagonal():
    rng = np.random.default_rng(1)
    m = sym(rng, 4)
    part = LabelPartition(((0,), (1,), (2,), (3,)), 4)
    np.testing.assert_array_equal(project_block_diagonal(m, part), np.diag(np.diag(m)))


def test_projector_idempotent_and_orthogonal():
    rng = np.random.default_rng(2)
    m = sym(rng, 6)
    part = two_cluster_partition(6)
    p = project_block_diagonal(m, part)
    np.testing.assert_array_equal(project_block_diagonal(p, part), p)
    # Orthogonality of complementary parts under the Frobenius inner product.
    assert float((p * (m - p)).sum()) == 0.0
    # Entrywise mask oracle.
    lab = part.labels()
    for i in range(6):
        for j in range(6):
            want = m[i, j] if lab[i] == lab[j] else 0.0
            assert p[i, j] == want


# ---------------------------------------------------------------------------
# losses and decomposition
# ---------------------------------------------------------------------------

def test_full_loss_zero_at_target():
    rng = np.random.default_rng(3)
    m = sym(rng, 4)
    mask = uniform_mask(two_cluster_partition(4), 1.0, 0.5)
    assert full_alignment_loss(m, m, mask) == 0.0


def test_full_loss_single_symmetric_difference():
    part = two_cluster_partition(4)
    mask = uniform_mask(part, 1.0, 0.5)
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = 0.5  # in-cluster pair, weight 1
    assert full_alignment_loss(a, b, mask) == pytest.approx(0.5)


def test_full_loss_matches_elementwise_oracle():
    rng = np.random.default_rng(4)
    part = two_cluster_partition(6)
    mask = random_mask(rng, part)
    a, b = sym(rng, 6), sym(rng, 6)
    oracle = sum(
        mask.values[i, j] ** 2 * (a[i, j] - b[i, j]) ** 2
        for i in range(6)
        for j in range(6)
    )
    assert full_alignment_loss(a, b, mask) == pytest.approx(oracle, rel=1e-12)


def test_block_loss_equals_full_on_single_cluster():
    rng = np.random.default_rng(5)
    part = LabelPartition.single_cluster(5)
    mask = uniform_mask(part, 1.3, 0.0)
    a, b = sym(rng, 5), sym(rng, 5)
    assert block_alignment_loss(a, b, mask) == full_alignment_loss(a, b, mask)


def test_block_loss_hand_case():
    # 4 labels, two 2-clusters; differences both within and across clusters.
    part = two_cluster_partition(4)
    vals = np.where(part.block_mask(), 2.0, 0.5)
    mask = WeightMask(values=vals, partition=part)
    a = np.zeros((4, 4))
    a[0, 1] = a[1, 0] = 0.3  # in cluster 0
    a[2, 3] = a[3, 2] = -0.2  # in cluster 1
    a[0, 2] = a[2, 0] = 0.9  # cross, must not count
    b = np.zeros((4, 4))
    want = 2 * (2.0 ** 2) * 0.3 ** 2 + 2 * (2.0 ** 2) * 0.2 ** 2
    assert block_alignment_loss(a, b, mask) == pytest.approx(want, rel=1e-12)


def test_decompose_reconstructs():
    rng = np.random.default_rng(6)
    part = two_cluster_partition(8)
    m = sym(rng, 8)
    d = decompose_consensus(m, part)
    np.testing.assert_array_equal(d.in_block + d.cross_block, m)
    block = part.block_mask()
    assert np.all(d.in_block[~block] == 0)
    assert np.all(d.cross_block[block] == 0)


def test_decompose_block_diagonal_input():
    part = two_cluster_partition(4)
    m = np.where(part.block_mask(), 0.7, 0.0)
    d = decompose_consensus(m, part)
    assert np.all(d.cross_block == 0)


# ---------------------------------------------------------------------------
# gradient descent: exact contraction law
# ---------------------------------------------------------------------------

def test_gd_fixed_point():
    rng = np.random.default_rng(7)
    part = two_cluster_partition(4)
    mask = uniform_mask(part, 1.0, 0.2)
    target = sym(rng, 4)
    traj = gd_run("full", target, target, mask, eta=0.25, steps=5)
    assert np.all(traj.objectives == 0.0)
    for it in traj.iterates:
        np.testing.assert_array_equal(it, target)


def test_gd_scalar_closed_form():
    # weight 1, eta 0.25: residual factor (1 - 0.5) per step, squared after 2.
    part = LabelPartition.single_cluster(2)
    mask = uniform_mask(part, 1.0, 0.0)
    r0 = np.array([[1.0, 1.0], [1.0, 1.0]])
    target = np.zeros((2, 2))
    traj = gd_run("full", r0, target, mask, eta=0.25, steps=2)
    np.testing.assert_allclose(traj.iterates[-1], 0.25 * np.ones((2, 2)), rtol=1e-15)


def test_gd_per_coordinate_law_full_and_block():
    rng = np.random.default_rng(8)
    for trial in range(10):
        c = int(rng.integers(4, 8))
        part = two_cluster_partition(c)
        mask = random_mask(rng, part)
        eta = max_stable_stepsize(mask) * rng.uniform(0.3, 1.0)
        r0, target = sym(rng, c), sym(rng, c)
        steps = 20
        factors = 1.0 - 2.0 * eta * mask.values ** 2

        traj = gd_run("full", r0, target, mask, eta, steps)
        expected = target + factors ** steps * (r0 - target)
        np.testing.assert_allclose(traj.iterates[-1], expected, rtol=1e-10, atol=1e-12)
        assert np.all(np.diff(traj.objectives) <= 1e-12)

        traj_b = gd_run("block", r0, target, mask, eta, steps)
        block = part.block_mask()
        expected_b = np.where(block, target + factors ** steps * (r0 - target), 0.0)
        np.testing.assert_allclose(traj_b.iterates[-1], expected_b, rtol=1e-10, atol=1e-12)
        assert np.all(np.diff(traj_b.objectives) <= 1e-12)


def test_gd_stepsize_precondition():
    part = two_cluster_partition(4)
    mask = uniform_mask(part, 2.0, 0.1)
    limit = max_stable_stepsize(mask)
    with pytest.raises(StepSizeError):
        gd_run("full", np.zeros((4, 4)), np.ones((4, 4)), mask, eta=limit * 1.5, steps=1)


def test_rate_ordering():
    rng = np.random.default_rng(9)
    for trial in range(10):
        part = two_cluster_partition(6)
        mask = random_mask(rng, part, hi_out=0.4)
        eta = max_stable_stepsize(mask)
        worst_block, worst_full = contraction_factors(mask, eta)
        assert worst_block < worst_full


# ---------------------------------------------------------------------------
# decomposition identity of the two objectives
# ---------------------------------------------------------------------------

def test_identity_no_cross_mass():
    rng = np.random.default_rng(10)
    part = two_cluster_partition(6)
    mask = uniform_mask(part, 1.0, 0.3)
    target = project_block_diagonal(sym(rng, 6), part)  # E = 0
    r = project_block_diagonal(sym(rng, 6), part)
    f_full, f_blk, cross = theorem2_check(r, target, mask)
    assert cross == 0.0
    assert f_full == pytest.approx(f_blk, rel=1e-12)


def test_identity_masked_out_cross():
    rng = np.random.default_rng(11)
    part = two_cluster_partition(6)
    mask = uniform_mask(part, 1.0, 0.0)  # gamma_out = 0
    target = sym(rng, 6)
    r = project_block_diagonal(sym(rng, 6), part)
    _, _, cross = theorem2_check(r, target, mask)
    assert cross == 0.0


def test_identity_random_instances():
    rng = np.random.default_rng(12)
    for trial in range(25):
        c = int(rng.integers(4, 10))
        part = two_cluster_partition(c)
        mask = random_mask(rng, part)
        target = sym(rng, c)
        r = project_block_diagonal(sym(rng, c), part)
        f_full, f_blk, cross = theorem2_check(r, target, mask)
        # Independent evaluation of both sides, entry by entry.
        lab = part.labels()
        lhs = sum(
            mask.values[i, j] ** 2 * (r[i, j] - target[i, j]) ** 2
            for i in range(c)
            for j in range(c)
        )
        rhs_blk = sum(
            mask.values[i, j] ** 2 * (r[i, j] - target[i, j]) ** 2
            for i in range(c)
            for j in range(c)
            if lab[i] == lab[j]
        )
        rhs_cross = sum(
            mask.values[i, j] ** 2 * target[i, j] ** 2
            for i in range(c)
            for j in range(c)
            if lab[i] != lab[j]
        )
        assert f_full == pytest.approx(lhs, rel=1e-12)
        assert f_blk == pytest.approx(rhs_blk, rel=1e-12)
        assert cross == pytest.approx(rhs_cross, rel=1e-12)
        denom = max(abs(f_full), 1e-30)
        assert abs(f_full - f_blk - cross) / denom < 1e-12


def test_identity_along_block_trajectory():
    rng = np.random.default_rng(13)
    part = two_cluster_partition(8)
    mask = random_mask(rng, part)
    target = sym(rng, 8)
    traj = gd_run("block", sym(rng, 8), target, mask, eta=max_stable_stepsize(mask), steps=15)
    for it in traj.iterates:
        f_full, f_blk, cross = theorem2_check(it, target, mask)
        denom = max(abs(f_full), 1e-30)
        assert abs(f_full - f_blk - cross) / denom < 1e-12


def test_support_violation_rejected():
    rng = np.random.default_rng(14)
    part = two_cluster_partition(4)
    mask = uniform_mask(part, 1.0, 0.2)
    with pytest.raises(SupportViolationError):
        theorem2_check(sym(rng, 4), sym(rng, 4), mask)


# ---------------------------------------------------------------------------
# training-time loss on prediction scores
# ---------------------------------------------------------------------------

def test_zero_lambda():
    rng = np.random.default_rng(15)
    preds = PredictionMatrix(rng.uniform(0.1, 0.9, size=(6, 4)))
    loss, grad = local_alignment_loss_and_grad(preds, np.zeros((4, 4)), AlignmentLossSpec(lam=0.0))
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_loss_zero_when_predictions_match_teacher():
    rng = np.random.default_rng(16)
    preds = PredictionMatrix(rng.uniform(0.1, 0.9, size=(10, 3)))
    from fedharmony.corrstats import correlation_matrix

    target = correlation_matrix(preds).values
    loss, _ = local_alignment_loss_and_grad(preds, target, AlignmentLossSpec(lam=0.5))
    assert loss == pytest.approx(0.0, abs=1e-25)


def _fd_alignment_grad(scores, target, spec, eps, h=1e-6):
    out = np.zeros_like(scores)
    for i in range(scores.shape[0]):
        for j in range(scores.shape[1]):
            up = scores.copy()
            dn = scores.copy()
            up[i, j] += h
            dn[i, j] -= h
            lu, _ = local_alignment_loss_and_grad(PredictionMatrix(up), target, spec, eps)
            ld, _ = local_alignment_loss_and_grad(PredictionMatrix(dn), target, spec, eps)
            out[i, j] = (lu - ld) / (2 * h)
    return out


@pytest.mark.parametrize("with_partition", [False, True])
def test_alignment_grad_matches_finite_differences(with_partition):
    rng = np.random.default_rng(17)
    scores = rng.uniform(0.15, 0.85, size=(6, 4))
    target = sym(rng, 4, scale=0.3)
    part = two_cluster_partition(4) if with_partition else None
    spec = AlignmentLossSpec(lam=0.7, partition=part)
    preds = PredictionMatrix(scores)
    _, analytic = local_alignment_loss_and_grad(preds, target, spec, 1e-8)
    numeric = _fd_alignment_grad(scores, target, spec, 1e-8)
    scale = max(np.abs(numeric).max(), 1e-12)
    assert np.abs(analytic - numeric).max() / scale < 1e-5


def test_block_path_matches_masked_full_computation():
    rng = np.random.default_rng(18)
    scores = rng.uniform(0.1, 0.9, size=(12, 6))
    target = sym(rng, 6, scale=0.4)
    part = two_cluster_partition(6)
    preds = PredictionMatrix(scores)
    loss_block, _ = local_alignment_loss_and_grad(preds, target, AlignmentLossSpec(lam=1.0, partition=part))
    from fedharmony.corrstats import correlation_matrix

    r = correlation_matrix(preds).values
    resid = np.where(part.block_mask(), r - target, 0.0)
    assert loss_block == pytest.approx(float((resid * resid).sum()), rel=1e-12)


def test_singleton_cluster_supported():
    rng = np.random.default_rng(19)
    scores = rng.uniform(0.2, 0.8, size=(8, 3))
    part = LabelPartition(((0, 1), (2,)), 3)
    spec = AlignmentLossSpec(lam=0.3, partition=part)
    loss, grad = local_alignment_loss_and_grad(PredictionMatrix(scores), sym(rng, 3), spec)
    assert np.isfinite(loss)
    assert grad.shape == scores.shape


def test_mask_invariants():
    part = two_cluster_partition(4)
    with pytest.raises(ValueError):
        # cross-cluster weight above in-cluster minimum
        WeightMask(values=np.full((4, 4), 1.0), partition=part)


def test_benchmark_reports_speedup_shape():
    out = benchmark_alignment_step(16, 4, 32, repeats=3, seed=0)
    assert out["full_seconds"] > 0
    assert out["block_seconds"] > 0
    assert "ratio" in out
