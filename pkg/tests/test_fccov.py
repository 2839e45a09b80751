"""Dependence statistic: oracle agreement, tie handling, gradient integrity."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fccovnet.fccov import (
    build_anchor_index,
    center_scores,
    falling_factorial,
    fccov_fast,
    fccov_grad,
    fccov_naive,
    fccov_slice,
    fccov_statistic,
    increasing_tuples,
    ordered_tuples,
    permutation_independence_test,
)

# golden value of the enumeration on the pinned instance below: u = centered
# (1..8), responses 1..8 on the real line (equals -1/30)
GOLDEN_N8_LINE = -0.03333333333333333


def line_distances(points):
    points = np.asarray(points, dtype=float)
    return np.abs(points[:, None] - points[None, :])


def random_instance(rng, n, ties=False):
    if ties:
        pts = rng.integers(0, max(2, n // 3), size=n).astype(float)
    else:
        pts = rng.standard_normal(n)
    return line_distances(pts), center_scores(rng.standard_normal(n))


# ---------------------------------------------------------------------------
# Index utilities
# ---------------------------------------------------------------------------


def test_tuple_counts():
    assert sum(1 for _ in ordered_tuples(7, 4)) == falling_factorial(7, 4)
    assert sum(1 for _ in increasing_tuples(7, 4)) == 35
    assert falling_factorial(5, 4) == 120


def test_anchor_index_simple_line():
    d = line_distances([0.0, 1.0, 3.0])
    idx = build_anchor_index(d)
    assert list(idx.order[0]) == [0, 1, 2]
    assert list(idx.order[2]) == [2, 1, 0]


def test_anchor_index_all_equal_distances():
    n = 6
    d = np.full((n, n), 2.0)
    np.fill_diagonal(d, 0.0)
    idx = build_anchor_index(d)
    for t in range(n):
        bounds = idx.tie_groups(t)
        assert list(bounds) == [0, 1, n]  # the anchor alone, then one group


@pytest.mark.parametrize("seed", range(5))
def test_anchor_index_orders_are_nondecreasing_permutations(seed):
    rng = np.random.default_rng(seed)
    n = 12
    d, _ = random_instance(rng, n, ties=bool(seed % 2))
    idx = build_anchor_index(d)
    for t in range(n):
        row = d[t, idx.order[t]]
        assert np.all(np.diff(row) >= 0.0)
        assert sorted(idx.order[t]) == list(range(n))
        # tie groups delimit exact runs of equal distance
        for r in range(n):
            lo, hi = idx.group_start[t, r], idx.group_end[t, r]
            assert np.all(row[lo:hi] == row[r])
            if lo > 0:
                assert row[lo - 1] < row[r]
            if hi < n:
                assert row[hi] > row[r]


# ---------------------------------------------------------------------------
# Statistic: pinned values and degenerate cases
# ---------------------------------------------------------------------------


def test_golden_value_n8_line():
    d = line_distances(np.arange(1.0, 9.0))
    u = center_scores(np.arange(1.0, 9.0))
    assert_allclose(fccov_naive(u, d), GOLDEN_N8_LINE, rtol=1e-13)
    assert_allclose(fccov_slice(u, d), GOLDEN_N8_LINE, rtol=1e-13)
    assert_allclose(fccov_fast(u, build_anchor_index(d)), GOLDEN_N8_LINE, rtol=1e-13)


def test_zero_scores_give_zero():
    d = line_distances(np.arange(6.0))
    u = np.zeros(6)
    assert fccov_naive(u, d) == 0.0
    assert fccov_slice(u, d) == 0.0
    assert fccov_fast(u, build_anchor_index(d)) == 0.0


def test_all_equal_distances_give_zero():
    n = 7
    d = np.full((n, n), 3.0)
    np.fill_diagonal(d, 0.0)
    u = center_scores(np.random.default_rng(0).standard_normal(n))
    assert fccov_naive(u, d) == 0.0
    assert fccov_slice(u, d) == 0.0
    assert fccov_fast(u, build_anchor_index(d)) == 0.0


def test_small_n_rejected():
    d = line_distances(np.arange(4.0))
    with pytest.raises(ValueError, match="at least 5"):
        fccov_naive(np.zeros(4), d)
    with pytest.raises(ValueError, match="at least 5"):
        fccov_fast(np.zeros(4), build_anchor_index(d))


def test_index_size_mismatch_rejected():
    idx = build_anchor_index(line_distances(np.arange(6.0)))
    with pytest.raises(ValueError, match="length"):
        fccov_fast(np.zeros(7), idx)


# ---------------------------------------------------------------------------
# Three-tier equivalence
# ---------------------------------------------------------------------------


def test_slice_matches_naive_50_instances():
    rng = np.random.default_rng(10)
    for _ in range(50):
        n = int(rng.integers(5, 21))
        d, u = random_instance(rng, n, ties=bool(rng.integers(2)))
        a, b = fccov_naive(u, d), fccov_slice(u, d)
        assert abs(a - b) <= 1e-10 * (1.0 + abs(a))


def test_fast_matches_naive_tie_free():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(5, 41))
        d, u = random_instance(rng, n)
        a = fccov_naive(u, d)
        b = fccov_fast(u, build_anchor_index(d))
        assert abs(a - b) <= 1e-9 * (1.0 + abs(a))


def test_fast_matches_naive_with_duplicated_responses():
    rng = np.random.default_rng(12)
    for _ in range(30):
        n = int(rng.integers(6, 25))
        d, u = random_instance(rng, n, ties=True)
        a = fccov_naive(u, d)
        b = fccov_fast(u, build_anchor_index(d))
        assert abs(a - b) <= 1e-9 * (1.0 + abs(a))


def test_scale_equivariance():
    rng = np.random.default_rng(13)
    d, u = random_instance(rng, 15)
    idx = build_anchor_index(d)
    base = fccov_fast(u, idx)
    # powers of two rescale without rounding, so the identity is bitwise
    for c in (2.0, -4.0, 0.25):
        assert fccov_fast(c * u, idx) == c * c * base
    for c in (-3.0, 1.7, 0.3):
        assert_allclose(fccov_fast(c * u, idx), c * c * base, rtol=1e-13)


def test_isometry_invariance_bit_for_bit():
    # strictly monotone distance transforms preserve all comparisons
    rng = np.random.default_rng(14)
    d, u = random_instance(rng, 20, ties=True)
    for transform in (lambda x: x / (1.0 + x), np.square):
        d2 = transform(d)
        np.fill_diagonal(d2, 0.0)
        assert fccov_naive(u, d2) == fccov_naive(u, d)
        assert fccov_slice(u, d2) == fccov_slice(u, d)
        assert fccov_fast(u, build_anchor_index(d2)) == fccov_fast(
            u, build_anchor_index(d)
        )


def test_statistic_wrapper_centers():
    rng = np.random.default_rng(15)
    d, _ = random_instance(rng, 12)
    raw = rng.standard_normal(12) + 5.0
    for method in ("fast", "slice", "naive"):
        value, centered = fccov_statistic(raw, d, method=method)
        assert abs(centered.mean()) < 1e-12
        assert_allclose(value, fccov_naive(center_scores(raw), d), rtol=1e-10)


# ---------------------------------------------------------------------------
# Gradient
# ---------------------------------------------------------------------------


def test_grad_zero_at_zero_scores():
    d, _ = random_instance(np.random.default_rng(16), 10)
    g = fccov_grad(np.zeros(10), build_anchor_index(d))
    assert np.all(g == 0.0)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(17)
    h = 1e-6
    for _ in range(8):
        n = int(rng.integers(6, 14))
        d, u = random_instance(rng, n, ties=bool(rng.integers(2)))
        idx = build_anchor_index(d)
        g = fccov_grad(u, idx)
        fd = np.zeros(n)
        for m in range(n):
            up, um = u.copy(), u.copy()
            up[m] += h
            um[m] -= h
            fd[m] = (fccov_fast(up, idx) - fccov_fast(um, idx)) / (2.0 * h)
        assert np.max(np.abs(g - fd)) <= 1e-6 * (1.0 + np.max(np.abs(fd)))


def test_grad_matches_explicit_quadratic_form():
    rng = np.random.default_rng(18)
    n = 10
    d, u = random_instance(rng, n, ties=True)
    phi = (d[:, None, :] < d[None, :, :]).astype(float)
    m_mat = np.zeros((n, n))
    for (i, j, k, l) in ordered_tuples(n, 4):
        m_mat[i, j] += phi[i, k, l] * phi[j, k, l]
    expected = (m_mat + m_mat.T) @ u / falling_factorial(n, 4)
    g = fccov_grad(u, build_anchor_index(d))
    assert np.max(np.abs(g - expected)) < 1e-10


# ---------------------------------------------------------------------------
# Permutation test
# ---------------------------------------------------------------------------


def test_permutation_test_rejects_strong_dependence():
    rng = np.random.default_rng(19)
    n = 100
    v = rng.standard_normal(n)
    d = line_distances(v)
    # scores tied directly to the response positions
    res = permutation_independence_test(v, d, n_perm=199, seed=0)
    assert res.p_value <= 0.05
    assert not res.degenerate


def test_permutation_test_pvalue_in_unit_interval():
    rng = np.random.default_rng(20)
    d = line_distances(rng.standard_normal(30))
    res = permutation_independence_test(rng.standard_normal(30), d, n_perm=199, seed=1)
    assert 0.0 < res.p_value <= 1.0


def test_permutation_test_constant_scores_degenerate():
    d = line_distances(np.arange(8.0))
    res = permutation_independence_test(np.full(8, 3.0), d, n_perm=99, seed=2)
    assert res.degenerate
    assert res.p_value == 1.0


def test_permutation_test_needs_enough_permutations():
    d = line_distances(np.arange(8.0))
    with pytest.raises(ValueError, match="19"):
        permutation_independence_test(np.arange(8.0), d, n_perm=5)
