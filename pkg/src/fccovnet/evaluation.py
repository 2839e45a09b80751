"""Metrics for judging recovered sufficient predictors.

Distance correlation measures dependence between the estimated and true
predictor matrices without assuming any functional form; the alignment
discrepancy (``kappa_distance``) measures recovery up to the orthogonal
mixing that the training objective cannot resolve.
"""

from __future__ import annotations

import warnings

import numpy as np

from .metrics import _pairwise_sq_norm

__all__ = ["DegenerateStatisticWarning", "distance_correlation", "kappa_distance"]

MAX_ALIGN_DIM = 5


class DegenerateStatisticWarning(UserWarning):
    """A statistic fell back to a defined value on degenerate input."""


def _double_centered(rows):
    d = np.sqrt(_pairwise_sq_norm(rows))
    row_mean = d.mean(axis=1, keepdims=True)
    col_mean = d.mean(axis=0, keepdims=True)
    return d - row_mean - col_mean + d.mean()


def distance_correlation(a, b):
    """Sample distance correlation between two row-matched matrices, in [0, 1].

    Classical plug-in estimator: double-center the Euclidean distance
    matrices of both samples, then ``dcor^2 = mean(A*B) / sqrt(mean(A*A) *
    mean(B*B))``.  Returns 0 (with :class:`DegenerateStatisticWarning`) when
    either sample is constant, so replicate sweeps never abort.
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    ca = _double_centered(a)
    cb = _double_centered(b)
    var_a = np.mean(ca * ca)
    var_b = np.mean(cb * cb)
    if var_a <= 0.0 or var_b <= 0.0:
        warnings.warn(
            "constant sample: distance correlation is undefined, returning 0",
            DegenerateStatisticWarning,
            stacklevel=2,
        )
        return 0.0
    cov2 = np.mean(ca * cb)
    value = np.sqrt(max(cov2, 0.0) / np.sqrt(var_a * var_b))
    return float(min(value, 1.0))


def kappa_distance(estimate, truth):
    """Mean squared rowwise discrepancy minimized over orthogonal mixings.

    Both matrices are column-centered, then the estimate is compared with
    ``truth`` rotated/reflected by the orthogonal matrix that aligns them
    best (the Procrustes solution via SVD of the cross-moment).  A
    rank-deficient cross-moment still yields the optimal value but the
    aligning matrix is not unique; this is flagged with
    :class:`DegenerateStatisticWarning`.
    """
    estimate = _as_matrix(estimate)
    truth = _as_matrix(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    n, d = estimate.shape
    if d > MAX_ALIGN_DIM:
        raise ValueError(f"alignment is intended for d <= {MAX_ALIGN_DIM}, got {d}")
    est = estimate - estimate.mean(axis=0)
    tru = truth - truth.mean(axis=0)
    cross = est.T @ tru
    sing = np.linalg.svd(cross, compute_uv=False)
    if sing[0] <= 0.0 or sing[-1] <= 1e-12 * sing[0]:
        warnings.warn(
            "rank-deficient cross-moment: aligning matrix is not unique",
            DegenerateStatisticWarning,
            stacklevel=2,
        )
    value = (np.sum(est * est) + np.sum(tru * tru) - 2.0 * np.sum(sing)) / n
    return float(max(value, 0.0))


def _as_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected an (n, k) matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a
