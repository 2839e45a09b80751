"""Metric correctness: closed-form oracles, metric axioms, linear algebra round trips."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import ndtri

from fccovnet.errors import NotPositiveDefiniteError
from fccovnet.metrics import (
    DistanceMatrix,
    ResponseSet,
    SpdMatrix,
    affine_invariant,
    cholesky,
    euclidean,
    hellinger,
    log_cholesky,
    matrix_exp,
    matrix_log,
    pairwise_distances,
    sym_eig,
    total_variation,
    wasserstein2,
)


def random_spd(rng, m, scale=1.0):
    a = rng.standard_normal((m, m))
    return scale * (a @ a.T) + 0.5 * np.eye(m)


def gaussian_grid(mu, sigma, size):
    # quantile function of N(mu, sigma^2) at midpoint levels (2j-1)/(2*size)
    t = (2.0 * np.arange(1, size + 1) - 1.0) / (2.0 * size)
    return mu + sigma * ndtri(t)


# ---------------------------------------------------------------------------
# Wasserstein on quantile grids
# ---------------------------------------------------------------------------


def test_wasserstein_identical_grids_zero():
    g = gaussian_grid(0.3, 1.7, 21)
    assert wasserstein2(g, g) == 0.0


def test_wasserstein_constant_shift():
    g = gaussian_grid(0.0, 1.0, 41)
    assert_allclose(wasserstein2(g, g + 2.5), 2.5, rtol=1e-12)


def test_wasserstein_gaussian_closed_form():
    # closed form: W2^2 between N(mu1, s1^2) and N(mu2, s2^2) is (mu1-mu2)^2 + (s1-s2)^2
    g1 = gaussian_grid(0.0, 1.0, 2001)
    g2 = gaussian_grid(2.0, 3.0, 2001)
    expected = np.sqrt((0.0 - 2.0) ** 2 + (1.0 - 3.0) ** 2)
    assert abs(wasserstein2(g1, g2) - expected) < 1e-3


def test_wasserstein_converges_with_grid_refinement():
    expected = np.sqrt(1.0 + 0.25)
    errors = []
    for size in (101, 1001, 10001):
        g1 = gaussian_grid(0.0, 1.0, size)
        g2 = gaussian_grid(1.0, 0.5, size)
        errors.append(abs(wasserstein2(g1, g2) - expected))
    assert errors[2] < errors[1] < errors[0]
    assert errors[2] < 2e-4


def test_wasserstein_length_mismatch_rejected():
    with pytest.raises(ValueError, match="length mismatch"):
        wasserstein2(np.arange(5.0), np.arange(6.0))


def test_wasserstein_rejects_decreasing_grid():
    with pytest.raises(ValueError, match="nondecreasing"):
        wasserstein2(np.array([0.0, -1.0, 1.0]), np.zeros(3))


# ---------------------------------------------------------------------------
# SPD metrics
# ---------------------------------------------------------------------------


def test_affine_invariant_identity_pair():
    y = random_spd(np.random.default_rng(0), 3)
    assert affine_invariant(y, y) < 1e-12


def test_affine_invariant_diagonal_case():
    # d(I, e*I) = ||log(e*I)||_F = sqrt(2) for 2x2
    y2 = np.e * np.eye(2)
    assert_allclose(affine_invariant(np.eye(2), y2), np.sqrt(2.0), rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_affine_invariance_property(seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(2, 4)
    y1, y2 = random_spd(rng, m), random_spd(rng, m)
    a = rng.standard_normal((m, m))
    while abs(np.linalg.det(a)) < 0.1:
        a = rng.standard_normal((m, m))
    base = affine_invariant(y1, y2)
    moved = affine_invariant(a @ y1 @ a.T, a @ y2 @ a.T)
    assert abs(base - moved) < 1e-8


def _log_cholesky_loops(y1, y2):
    """Independent scalar-loop evaluation of the Log-Cholesky distance."""
    p1 = np.linalg.cholesky(y1)
    p2 = np.linalg.cholesky(y2)
    m = p1.shape[0]
    acc = 0.0
    for i in range(m):
        for j in range(i):
            acc += (p1[i, j] - p2[i, j]) ** 2
        acc += (np.log(p1[i, i]) - np.log(p2[i, i])) ** 2
    return np.sqrt(acc)


def test_log_cholesky_identity_pair():
    y = random_spd(np.random.default_rng(1), 3)
    assert log_cholesky(y, y) == 0.0


def test_log_cholesky_diagonal_case():
    # factors are diag(e, 1) and I; only one log-diagonal entry differs, by 1
    y2 = np.diag([np.e**2, 1.0])
    assert_allclose(log_cholesky(np.eye(2), y2), 1.0, rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_log_cholesky_matches_scalar_loops(seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(2, 5)
    y1, y2 = random_spd(rng, m), random_spd(rng, m)
    assert_allclose(log_cholesky(y1, y2), _log_cholesky_loops(y1, y2), rtol=1e-12)


def test_spd_metric_rejects_non_pd():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    with pytest.raises(NotPositiveDefiniteError):
        log_cholesky(bad, np.eye(2))
    with pytest.raises(NotPositiveDefiniteError):
        affine_invariant(bad, np.eye(2))


# ---------------------------------------------------------------------------
# Probability vector metrics
# ---------------------------------------------------------------------------


def test_hellinger_tv_identity():
    p = np.array([0.2, 0.5, 0.3])
    assert hellinger(p, p) == 0.0
    assert total_variation(p, p) == 0.0


def test_hellinger_tv_disjoint_support():
    p, q = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert_allclose(hellinger(p, q), 1.0, rtol=1e-15)
    assert_allclose(total_variation(p, q), 1.0, rtol=1e-15)


def test_tv_half():
    assert_allclose(total_variation([0.5, 0.5], [1.0, 0.0]), 0.5, rtol=1e-15)


def test_probability_metric_rejects_negative():
    with pytest.raises(ValueError, match="negative"):
        hellinger([-0.1, 1.1], [0.5, 0.5])


def test_hellinger_tv_bounded():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = rng.dirichlet(np.ones(5))
        q = rng.dirichlet(np.ones(5))
        assert 0.0 <= hellinger(p, q) <= 1.0
        assert 0.0 <= total_variation(p, q) <= 1.0


# ---------------------------------------------------------------------------
# Small linear algebra
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("m", [1, 2, 3, 5, 8])
def test_sym_eig_against_lapack(m):
    rng = np.random.default_rng(m)
    a = rng.standard_normal((m, m))
    a = a + a.T
    w, v = sym_eig(a)
    w_ref = np.linalg.eigvalsh(a)
    assert_allclose(w, w_ref, atol=1e-10 * max(1.0, np.max(np.abs(w_ref))))
    assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)
    assert np.max(np.abs(v.T @ v - np.eye(m))) < 1e-10


def test_matrix_log_identity_and_exp_zero():
    assert_allclose(matrix_log(np.eye(3)), np.zeros((3, 3)), atol=1e-14)
    assert_allclose(matrix_exp(np.zeros((3, 3))), np.eye(3), atol=1e-14)


def test_exp_log_round_trip_100_matrices():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        m = rng.integers(2, 5)
        y = random_spd(rng, m)
        back = matrix_exp(matrix_log(y))
        worst = max(worst, np.linalg.norm(back - y))
    assert worst < 1e-8


def test_cholesky_matches_numpy():
    rng = np.random.default_rng(3)
    for _ in range(20):
        y = random_spd(rng, rng.integers(2, 6))
        assert_allclose(cholesky(y), np.linalg.cholesky(y), rtol=1e-10, atol=1e-12)


def test_cholesky_rejects_small_pivot():
    with pytest.raises(NotPositiveDefiniteError, match="pivot"):
        cholesky(np.diag([1.0, 1e-13]))


def test_spd_matrix_type_validates():
    SpdMatrix(np.eye(2))
    with pytest.raises(NotPositiveDefiniteError):
        SpdMatrix(np.diag([1.0, -1.0]))


# ---------------------------------------------------------------------------
# Metric axioms, spot-checked over random triples
# ---------------------------------------------------------------------------

def _random_object_and_metric(rng, which):
    if which == "euclidean":
        return (lambda: rng.standard_normal(4)), euclidean
    if which == "wasserstein2":
        return (lambda: np.sort(rng.standard_normal(21))), wasserstein2
    if which == "hellinger":
        return (lambda: rng.dirichlet(np.ones(4))), hellinger
    if which == "total-variation":
        return (lambda: rng.dirichlet(np.ones(4))), total_variation
    if which == "log-cholesky":
        return (lambda: random_spd(rng, 3)), log_cholesky
    return (lambda: random_spd(rng, 3)), affine_invariant


@pytest.mark.parametrize(
    "which",
    ["euclidean", "wasserstein2", "hellinger", "total-variation", "log-cholesky", "affine-invariant"],
)
def test_metric_axioms(which):
    rng = np.random.default_rng(hash(which) % 2**32)
    make, dist = _random_object_and_metric(rng, which)
    for _ in range(25):
        a, b, c = make(), make(), make()
        dab, dba = dist(a, b), dist(b, a)
        assert dab >= 0.0
        assert_allclose(dab, dba, rtol=1e-10, atol=1e-12)
        assert dist(a, a) < 1e-10
        # triangle inequality, with slack for floating point
        assert dab <= dist(a, c) + dist(c, b) + 1e-9


# ---------------------------------------------------------------------------
# Response sets and pairwise matrices
# ---------------------------------------------------------------------------


def test_pairwise_euclidean_three_four_five():
    rs = ResponseSet.euclidean_vectors(np.array([[0.0, 0.0], [3.0, 4.0]]))
    d = pairwise_distances(rs).values
    assert_allclose(d, [[0.0, 5.0], [5.0, 0.0]], rtol=1e-15)


def test_pairwise_gaussian_w2_close_to_unit():
    g1 = gaussian_grid(0.0, 1.0, 2001)
    g2 = gaussian_grid(1.0, 1.0, 2001)
    rs = ResponseSet.quantile_grids(np.stack([g1, g2]))
    d = pairwise_distances(rs).values
    assert abs(d[0, 1] - 1.0) < 1e-3


@pytest.mark.parametrize("metric", ["log-cholesky", "affine-invariant"])
def test_pairwise_spd_matches_scalar_loop(metric):
    rng = np.random.default_rng(11)
    stack = np.stack([random_spd(rng, 2) for _ in range(8)])
    rs = ResponseSet.spd_matrices(stack, metric=metric)
    d = pairwise_distances(rs).values
    scalar = log_cholesky if metric == "log-cholesky" else affine_invariant
    for i in range(8):
        for j in range(8):
            ref = scalar(stack[i], stack[j]) if i != j else 0.0
            assert_allclose(d[i, j], ref, rtol=1e-9, atol=1e-12)


def test_pairwise_quantile_and_simplex_match_scalar_loop():
    rng = np.random.default_rng(12)
    grids = np.sort(rng.standard_normal((6, 15)), axis=1)
    rs = ResponseSet.quantile_grids(grids)
    d = pairwise_distances(rs).values
    for i in range(6):
        for j in range(i + 1, 6):
            assert_allclose(d[i, j], wasserstein2(grids[i], grids[j]), rtol=1e-12)
    probs = rng.dirichlet(np.ones(5), size=6)
    for metric, scalar in (("hellinger", hellinger), ("total-variation", total_variation)):
        rs = ResponseSet.probability_vectors(probs, metric=metric)
        d = pairwise_distances(rs).values
        for i in range(6):
            for j in range(i + 1, 6):
                assert_allclose(d[i, j], scalar(probs[i], probs[j]), rtol=1e-12)


def test_pairwise_identical_objects_distance_zero():
    rng = np.random.default_rng(13)
    row = rng.standard_normal(3)
    rs = ResponseSet.euclidean_vectors(np.stack([row, row, rng.standard_normal(3)]))
    d = pairwise_distances(rs).values
    assert d[0, 1] == 0.0 and d[1, 0] == 0.0


def test_pairwise_precomputed_is_identity():
    vals = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]])
    rs = ResponseSet.precomputed(vals)
    assert pairwise_distances(rs).values is rs.distances.values


def test_pairwise_symmetry_and_zero_diag():
    rng = np.random.default_rng(14)
    stack = np.stack([random_spd(rng, 3) for _ in range(10)])
    d = pairwise_distances(ResponseSet.spd_matrices(stack, metric="affine-invariant")).values
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0.0)


def test_response_set_rejects_bad_payloads():
    with pytest.raises(ValueError, match="sum to 1"):
        ResponseSet.probability_vectors([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ValueError, match="negative probability"):
        ResponseSet.probability_vectors([[-0.1, 1.1], [0.5, 0.5]])
    with pytest.raises(ValueError, match="nondecreasing"):
        ResponseSet.quantile_grids([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NotPositiveDefiniteError) as excinfo:
        ResponseSet.spd_matrices([np.eye(2), np.diag([1.0, -2.0])])
    assert excinfo.value.index == 1
    with pytest.raises(ValueError, match="not compatible"):
        ResponseSet("euclidean-vectors", "wasserstein2", np.zeros((3, 2)))


def test_distance_matrix_validation():
    with pytest.raises(ValueError, match="symmetric"):
        DistanceMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError, match="diagonal"):
        DistanceMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError, match="negative"):
        DistanceMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))
