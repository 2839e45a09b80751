"""Metric-space response collections and the distances that compare them.

Responses may be Euclidean vectors, one-dimensional distributions stored as
quantile grids, symmetric positive definite (SPD) matrices, probability
vectors, or an opaque precomputed distance matrix.  Every metric here is a
true metric on its domain: nonnegative, symmetric, and zero exactly on
identical objects.

The SPD metrics need a small amount of dense linear algebra (symmetric
eigendecomposition, matrix log/exp, Cholesky).  Matrices are tiny (order
2-5 in practice), so these are implemented directly: cyclic Jacobi
rotations for the eigenproblem and an unblocked Cholesky factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefiniteError, NumericalError

__all__ = [
    "DistanceMatrix",
    "ResponseSet",
    "SpdMatrix",
    "pairwise_distances",
    "euclidean",
    "wasserstein2",
    "affine_invariant",
    "log_cholesky",
    "hellinger",
    "total_variation",
    "sym_eig",
    "matrix_log",
    "matrix_exp",
    "cholesky",
]

# Metrics each response kind supports; the first entry is the default.
KIND_METRICS = {
    "euclidean-vectors": ("euclidean",),
    "quantile-grids": ("wasserstein2",),
    "spd-matrices": ("log-cholesky", "affine-invariant"),
    "probability-vectors": ("hellinger", "total-variation"),
    "precomputed": ("precomputed",),
}

SYMMETRY_TOL = 1e-10
SIMPLEX_TOL = 1e-8
CHOLESKY_PIVOT_TOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


# ---------------------------------------------------------------------------
# Small dense linear algebra
# ---------------------------------------------------------------------------

def sym_eig(a, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and orthonormal
    eigenvectors in the columns of ``v``, so ``a = v @ diag(w) @ v.T``.
    Convergence is declared when the off-diagonal Frobenius norm drops below
    ``tol`` relative to the matrix scale.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
        raise ValueError("matrix is not symmetric")
    m = a.shape[0]
    w = a.copy()
    v = np.eye(m)
    if m == 1:
        return np.array([w[0, 0]]), v
    scale = max(1.0, float(np.linalg.norm(a)))
    for sweep in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.tril(w, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = w[p, q]
                if apq == 0.0:
                    continue
                tau = (w[q, q] - w[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(tau * tau + 1.0)) if tau != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = w[p, :].copy(), w[q, :].copy()
                w[p, :] = c * rp - s * rq
                w[q, :] = s * rp + c * rq
                cp, cq = w[:, p].copy(), w[:, q].copy()
                w[:, p] = c * cp - s * cq
                w[:, q] = s * cp + c * cq
                w[p, q] = w[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericalError(
            "Jacobi eigendecomposition did not converge", iterations=max_sweeps
        )
    eigvals = np.diag(w).copy()
    order = np.argsort(eigvals, kind="stable")
    return eigvals[order], v[:, order]


def _sym_eigvals_stack(a, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigenvalues of a stack of symmetric matrices, shape (N, m, m) -> (N, m).

    Same cyclic Jacobi scheme as :func:`sym_eig`, vectorized over the stack;
    all matrices share the sweep schedule and stop once every matrix meets
    the tolerance.
    """
    a = np.array(a, dtype=float)
    n, m, _ = a.shape
    if m == 1:
        return a[:, 0, 0].copy().reshape(n, 1)
    scale = np.maximum(1.0, np.sqrt(np.sum(a * a, axis=(1, 2))))
    idx = np.arange(n)
    for sweep in range(max_sweeps):
        low = np.tril_indices(m, -1)
        off = np.sqrt(2.0 * np.sum(a[:, low[0], low[1]] ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[:, p, q]
                nz = apq != 0.0
                tau = np.zeros(n)
                np.divide(a[:, q, q] - a[:, p, p], 2.0 * apq, out=tau, where=nz)
                t = np.where(
                    tau != 0.0,
                    np.sign(tau) / (np.abs(tau) + np.sqrt(tau * tau + 1.0)),
                    1.0,
                )
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                cp, cq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = c[:, None] * cp - s[:, None] * cq
                a[:, :, q] = s[:, None] * cp + c[:, None] * cq
                a[idx, p, q] = 0.0
                a[idx, q, p] = 0.0
    else:
        raise NumericalError(
            "stacked Jacobi eigendecomposition did not converge",
            iterations=max_sweeps,
        )
    return np.sort(a[:, np.arange(m), np.arange(m)], axis=1)


def cholesky(y):
    """Lower Cholesky factor of an SPD matrix.

    Rejects the input as not positive definite if any pivot falls at or
    below ``CHOLESKY_PIVOT_TOL``.
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    low = np.zeros((m, m))
    for j in range(m):
        pivot = y[j, j] - np.dot(low[j, :j], low[j, :j])
        if pivot <= CHOLESKY_PIVOT_TOL:
            raise NotPositiveDefiniteError(
                f"Cholesky pivot {pivot:.3e} at row {j} is not positive"
            )
        low[j, j] = np.sqrt(pivot)
        for i in range(j + 1, m):
            low[i, j] = (y[i, j] - np.dot(low[i, :j], low[j, :j])) / low[j, j]
    return low


def matrix_log(y):
    """Matrix logarithm of an SPD matrix via symmetric eigendecomposition."""
    w, v = sym_eig(y)
    if np.min(w) <= 0.0:
        raise NotPositiveDefiniteError(
            f"matrix logarithm requires positive eigenvalues, smallest is {np.min(w):.3e}"
        )
    out = (v * np.log(w)) @ v.T
    return 0.5 * (out + out.T)


def matrix_exp(a):
    """Matrix exponential of a symmetric matrix via eigendecomposition."""
    w, v = sym_eig(a)
    out = (v * np.exp(w)) @ v.T
    return 0.5 * (out + out.T)


def _inv_sqrt(y):
    """Inverse square root of an SPD matrix."""
    w, v = sym_eig(y)
    if np.min(w) <= 0.0:
        raise NotPositiveDefiniteError(
            f"inverse square root requires positive eigenvalues, smallest is {np.min(w):.3e}"
        )
    out = (v / np.sqrt(w)) @ v.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Scalar metrics
# ---------------------------------------------------------------------------

def euclidean(a, b):
    """Euclidean distance between two vectors."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def wasserstein2(q1, q2):
    """2-Wasserstein distance between distributions given as quantile grids.

    Both grids must evaluate the quantile functions at the same probability
    levels.  The squared distance is the integral over (0, 1) of the squared
    quantile difference, approximated by the midpoint rule, i.e. the plain
    average of squared differences over the grid.
    """
    q1 = np.asarray(q1, dtype=float).ravel()
    q2 = np.asarray(q2, dtype=float).ravel()
    if q1.shape != q2.shape:
        raise ValueError(f"quantile grid length mismatch: {q1.size} vs {q2.size}")
    _check_nondecreasing(q1, "first grid")
    _check_nondecreasing(q2, "second grid")
    return float(np.sqrt(np.sum((q1 - q2) ** 2) / q1.size))


def affine_invariant(y1, y2):
    """Affine-invariant distance between two SPD matrices.

    Computed as the Frobenius norm of ``log(y1^{-1/2} y2 y1^{-1/2})``, i.e.
    the root of the sum of squared log-eigenvalues of the whitened matrix.
    The value is unchanged when both arguments undergo the same congruence
    ``y -> a y a.T`` with invertible ``a``.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise ValueError(f"order mismatch: {y1.shape} vs {y2.shape}")
    r = _inv_sqrt(y1)
    w = r @ y2 @ r
    lam, _ = sym_eig(0.5 * (w + w.T))
    if np.min(lam) <= 0.0:
        raise NotPositiveDefiniteError(
            f"whitened matrix has non-positive eigenvalue {np.min(lam):.3e}"
        )
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def _log_cholesky_features(y):
    """Flatten an SPD matrix into (strict lower factor entries, log diagonal)."""
    low = cholesky(y)
    m = low.shape[0]
    tril = np.tril_indices(m, -1)
    return np.concatenate([low[tril], np.log(np.diag(low))])


def log_cholesky(y1, y2):
    """Log-Cholesky distance between two SPD matrices.

    With lower Cholesky factors ``p1, p2``, this is the root of
    ``||strict_lower(p1) - strict_lower(p2)||_F^2
    + ||log diag(p1) - log diag(p2)||_F^2``.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise ValueError(f"order mismatch: {y1.shape} vs {y2.shape}")
    diff = _log_cholesky_features(y1) - _log_cholesky_features(y2)
    return float(np.sqrt(np.sum(diff**2)))


def hellinger(p, q):
    """Hellinger distance between two probability vectors: ``sqrt(sum((sqrt(p)-sqrt(q))^2)/2)``.

    Bounded by 1; the bound is enforced against roundoff from masses that
    sum to 1 only within tolerance.
    """
    p, q = _check_simplex_pair(p, q)
    return min(float(np.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))), 1.0)


def total_variation(p, q):
    """Total variation distance between two probability vectors: ``sum(|p-q|)/2``, bounded by 1."""
    p, q = _check_simplex_pair(p, q)
    return min(float(0.5 * np.sum(np.abs(p - q))), 1.0)


def _check_simplex_pair(p, q):
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")
    for name, vec in (("first", p), ("second", q)):
        if np.min(vec) < 0.0:
            raise ValueError(f"{name} vector has a negative entry {np.min(vec):.3e}")
    return p, q


def _check_nondecreasing(grid, what):
    steps = np.diff(grid)
    if steps.size and np.min(steps) < -1e-12:
        raise ValueError(f"{what} is not nondecreasing (min step {np.min(steps):.3e})")


# ---------------------------------------------------------------------------
# Response collections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceMatrix:
    """A validated n-by-n matrix of pairwise distances."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"distance matrix must be square, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("distance matrix has non-finite entries")
        if np.max(np.abs(values - values.T), initial=0.0) > 0.0:
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(values) != 0.0):
            raise ValueError("distance matrix diagonal is not zero")
        if values.size and np.min(values) < 0.0:
            raise ValueError("distance matrix has negative entries")
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class SpdMatrix:
    """A single validated SPD matrix."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        _validate_spd(entries)
        object.__setattr__(self, "entries", entries)

    @property
    def m(self):
        return self.entries.shape[0]


def _validate_spd(y, index=None):
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise ValueError(f"SPD matrix must be square, got {y.shape}")
    if np.max(np.abs(y - y.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(y))):
        raise NotPositiveDefiniteError("matrix is not symmetric", index=index)
    try:
        cholesky(y)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(str(exc), index=index) from None


@dataclass(frozen=True)
class ResponseSet:
    """A collection of response objects plus the metric that compares them.

    Build instances through the factory classmethods, which validate the
    payloads (shared shape, simplex constraints, monotone grids, positive
    definiteness) and pin a compatible metric tag.
    """

    kind: str
    metric: str
    objects: np.ndarray | None = None
    distances: DistanceMatrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KIND_METRICS:
            raise ValueError(f"unknown response kind {self.kind!r}")
        if self.metric not in KIND_METRICS[self.kind]:
            raise ValueError(
                f"metric {self.metric!r} is not compatible with kind {self.kind!r}"
            )

    @property
    def n(self):
        if self.kind == "precomputed":
            return self.distances.n
        return self.objects.shape[0]

    def take(self, indices):
        """The sub-collection at ``indices``, same kind and metric."""
        indices = np.asarray(indices, dtype=int)
        if self.kind == "precomputed":
            sub = self.distances.values[np.ix_(indices, indices)]
            return ResponseSet.precomputed(DistanceMatrix(sub))
        return ResponseSet(self.kind, self.metric, self.objects[indices])

    @classmethod
    def euclidean_vectors(cls, arr):
        arr = _as_record_matrix(arr, min_cols=1)
        return cls("euclidean-vectors", "euclidean", arr)

    @classmethod
    def quantile_grids(cls, arr):
        arr = _as_record_matrix(arr, min_cols=1)
        for i, row in enumerate(arr):
            try:
                _check_nondecreasing(row, "quantile grid")
            except ValueError as exc:
                raise ValueError(f"record {i}: {exc}") from None
        return cls("quantile-grids", "wasserstein2", arr)

    @classmethod
    def spd_matrices(cls, arr, metric="log-cholesky"):
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ValueError(f"expected an (n, m, m) stack, got {arr.shape}")
        for i, y in enumerate(arr):
            _validate_spd(y, index=i)
        return cls("spd-matrices", metric, arr)

    @classmethod
    def probability_vectors(cls, arr, metric="hellinger"):
        arr = _as_record_matrix(arr, min_cols=1)
        if np.min(arr) < 0.0:
            bad = int(np.argmin(np.min(arr, axis=1)))
            raise ValueError(f"record {bad} has negative probability mass")
        sums = arr.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > SIMPLEX_TOL:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(
                f"record {bad} does not sum to 1 (sum {sums[bad]:.12f})"
            )
        return cls("probability-vectors", metric, arr)

    @classmethod
    def precomputed(cls, distances):
        if not isinstance(distances, DistanceMatrix):
            distances = DistanceMatrix(np.asarray(distances, dtype=float))
        return cls("precomputed", "precomputed", None, distances)


def _as_record_matrix(arr, min_cols=1):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] < min_cols:
        raise ValueError(f"expected an (n, k) array with k >= {min_cols}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("payload has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Pairwise distance computation
# ---------------------------------------------------------------------------

def pairwise_distances(responses: ResponseSet) -> DistanceMatrix:
    """All pairwise distances within a response set under its tagged metric.

    For a precomputed set this returns the supplied matrix unchanged.  The
    result is exactly symmetric with a zero diagonal.
    """
    if responses.n < 2:
        raise ValueError("need at least 2 responses for pairwise distances")
    metric = responses.metric
    if metric == "precomputed":
        return responses.distances
    if metric == "euclidean":
        d = _pairwise_sq_norm(responses.objects)
        np.sqrt(d, out=d)
    elif metric == "wasserstein2":
        d = _pairwise_sq_norm(responses.objects)
        d /= responses.objects.shape[1]
        np.sqrt(d, out=d)
    elif metric == "hellinger":
        d = _pairwise_sq_norm(np.sqrt(responses.objects))
        d *= 0.5
        np.sqrt(d, out=d)
        np.minimum(d, 1.0, out=d)
    elif metric == "total-variation":
        d = 0.5 * _pairwise_abs_sum(responses.objects)
        np.minimum(d, 1.0, out=d)
    elif metric == "log-cholesky":
        feats = np.stack([_log_cholesky_features(y) for y in responses.objects])
        d = _pairwise_sq_norm(feats)
        np.sqrt(d, out=d)
    elif metric == "affine-invariant":
        d = _pairwise_affine_invariant(responses.objects)
    else:  # pragma: no cover - guarded by ResponseSet validation
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d)


def _pairwise_sq_norm(rows, chunk=64):
    """Squared Euclidean distances between all row pairs, computed from
    explicit differences so that identical rows give exactly zero."""
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0]
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = rows[start:stop, None, :] - rows[None, :, :]
        out[start:stop] = np.sum(diff * diff, axis=-1)
    return out


def _pairwise_abs_sum(rows, chunk=64):
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0]
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        out[start:stop] = np.sum(np.abs(rows[start:stop, None, :] - rows[None, :, :]), axis=-1)
    return out


def _pairwise_affine_invariant(stack):
    """Affine-invariant distances over an SPD stack.

    Whitening roots are computed once per object; for each row the whitened
    matrices against all later objects are eigendecomposed as a stack.  Only
    the upper triangle is computed and then mirrored.
    """
    n = stack.shape[0]
    roots = np.empty_like(stack)
    for i, y in enumerate(stack):
        try:
            roots[i] = _inv_sqrt(y)
        except NotPositiveDefiniteError as exc:
            raise NotPositiveDefiniteError(str(exc), index=i) from None
    out = np.zeros((n, n))
    for i in range(n - 1):
        w = np.einsum("ab,jbc,cd->jad", roots[i], stack[i + 1 :], roots[i])
        w = 0.5 * (w + np.transpose(w, (0, 2, 1)))
        lam = _sym_eigvals_stack(w)
        if np.min(lam) <= 0.0:
            raise NotPositiveDefiniteError(
                "whitened pair has a non-positive eigenvalue", index=i
            )
        out[i, i + 1 :] = np.sqrt(np.sum(np.log(lam) ** 2, axis=1))
    return out + out.T
