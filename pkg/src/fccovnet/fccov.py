"""Rank-based conditional-mean dependence statistic and its fast evaluation.

For centered scores ``u`` and response objects ``V`` compared by a distance
matrix ``D``, the statistic is the average over all ordered 4-tuples of
distinct indices ``(i, j, k, l)`` of

    u_i * u_j * phi(i, k, l) * phi(j, k, l),
    phi(i, k, l) = 1 if D[i, l] < D[k, l] else 0.

It is nonnegative in expectation and zero exactly when the scores carry no
conditional-mean signal about the responses.  Three evaluation routes are
provided:

* :func:`fccov_naive` enumerates the 4-tuples; the reference for everything
  else, usable up to a few dozen samples.
* :func:`fccov_slice` accumulates per-pair score sums in O(n^3).
* :func:`fccov_fast` uses per-anchor distance rankings (built once by
  :func:`build_anchor_index` in O(n^2 log n)) and running prefix sums, so the
  statistic itself costs O(n^2).  Tied distances are handled by grouping:
  only strictly closer samples count, so every member of a tie group sees
  the prefix sum of the groups before it.

All three routes consume the scores exactly as given and evaluate the same
quadratic form ``u' M u / ((n)(n-1)(n-2)(n-3))``; the matrix ``M`` depends
only on distance comparisons.  Center scores first (``center_scores``) to
get the statistic under its zero-mean convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np

from .metrics import DistanceMatrix

__all__ = [
    "AnchorOrderIndex",
    "PermutationTestResult",
    "build_anchor_index",
    "center_scores",
    "falling_factorial",
    "fccov_fast",
    "fccov_grad",
    "fccov_naive",
    "fccov_slice",
    "fccov_statistic",
    "ordered_tuples",
    "increasing_tuples",
    "permutation_independence_test",
]

MIN_SAMPLES = 5


def falling_factorial(n, m):
    """The product n * (n-1) * ... * (n-m+1)."""
    out = 1
    for k in range(m):
        out *= n - k
    return out


def ordered_tuples(n, k):
    """All ordered k-tuples of distinct indices from range(n)."""
    return permutations(range(n), k)


def increasing_tuples(n, k):
    """All strictly increasing k-tuples of indices from range(n)."""
    return combinations(range(n), k)


def center_scores(u):
    """Return ``u`` with its mean removed, as a float array."""
    u = np.asarray(u, dtype=float).ravel()
    return u - u.mean()


def _as_scores(u, n=None):
    u = np.asarray(u, dtype=float).ravel()
    if n is not None and u.size != n:
        raise ValueError(f"scores have length {u.size}, expected {n}")
    if u.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {u.size}")
    return u


def _as_distances(d):
    if isinstance(d, DistanceMatrix):
        return d.values
    return DistanceMatrix(np.asarray(d, dtype=float)).values


@dataclass(frozen=True)
class AnchorOrderIndex:
    """Per-anchor distance rankings with tie-group boundaries.

    ``order[t]`` lists all sample indices (anchor ``t`` included, at
    distance zero) sorted by nondecreasing distance to ``t``.
    ``group_start[t, r]`` / ``group_end[t, r]`` delimit the run of positions
    whose distance to ``t`` equals the one at position ``r``.
    """

    order: np.ndarray
    group_start: np.ndarray
    group_end: np.ndarray

    @property
    def n(self):
        return self.order.shape[0]

    def tie_groups(self, t):
        """Boundary positions of anchor ``t``'s tie groups: [0, ..., n]."""
        starts = np.unique(self.group_start[t])
        return np.append(starts, self.n)


def build_anchor_index(d) -> AnchorOrderIndex:
    """Sort every row of a distance matrix and mark runs of equal distance."""
    dv = _as_distances(d)
    n = dv.shape[0]
    order = np.argsort(dv, axis=1, kind="stable")
    ds = np.take_along_axis(dv, order, axis=1)
    pos = np.broadcast_to(np.arange(n), (n, n))
    new_group = np.ones((n, n), dtype=bool)
    new_group[:, 1:] = ds[:, 1:] > ds[:, :-1]
    start = np.maximum.accumulate(np.where(new_group, pos, 0), axis=1)
    # end of a position's group = next group start, or n for the last group
    nxt = np.where(new_group, pos, n)
    suffix_min = np.minimum.accumulate(nxt[:, ::-1], axis=1)[:, ::-1]
    end = np.concatenate([suffix_min[:, 1:], np.full((n, 1), n)], axis=1)
    return AnchorOrderIndex(order=order, group_start=start, group_end=end)


def fccov_naive(u, d):
    """Statistic by exhaustive enumeration of all ordered distinct 4-tuples.

    Quartic cost; intended as the ground-truth oracle for small n.  The full
    index product is enumerated and tuples with repeated indices are masked
    out, one leading index at a time to bound memory at O(n^3).
    """
    dv = _as_distances(d)
    n = dv.shape[0]
    u = _as_scores(u, n)
    phi = (dv[:, None, :] < dv[None, :, :]).astype(float)  # phi[i, k, l]
    j, k, l = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    distinct = (j != k) & (j != l) & (k != l)
    total = 0.0
    for i in range(n):
        mask = distinct & (j != i) & (k != i) & (l != i)
        total += u[i] * np.sum(u[j][mask] * phi[i, k, l][mask] * phi[j, k, l][mask])
    return float(total / falling_factorial(n, 4))


def fccov_slice(u, d):
    """Statistic via per-pair score sums, cubic cost.

    For every ordered pair ``(k, l)`` accumulate ``s^2 - ss`` where ``s``
    and ``ss`` sum the scores / squared scores of all other samples strictly
    closer to ``l`` than ``k`` is.
    """
    dv = _as_distances(d)
    n = dv.shape[0]
    u = _as_scores(u, n)
    u2 = u * u
    total = 0.0
    for l in range(n):
        phi_l = dv[:, l][:, None] < dv[:, l][None, :]  # phi_l[i, k]
        s = u @ phi_l
        ss = u2 @ phi_l
        # drop i = l, which sorts strictly closest at distance 0
        nonzero = (dv[:, l] > 0.0).astype(float)
        s -= u[l] * nonzero
        ss -= u2[l] * nonzero
        total += np.sum(s * s - ss)
    return float(total / falling_factorial(n, 4))


def _prefix_tables(u, idx):
    """Per-position group prefix sums over each anchor's ranking.

    Returns ``(us, s, ss, valid)`` where for anchor ``t`` and rank position
    ``r`` holding sample ``k = order[t, r]``: ``s[t, r]`` sums the scores of
    samples strictly closer to ``t`` than ``k`` (anchor excluded), ``ss``
    does the same for squared scores, and ``valid`` masks out the anchor's
    own position.
    """
    order, start = idx.order, idx.group_start
    n = order.shape[0]
    us = u[order]
    cum = np.cumsum(us, axis=1)
    cum2 = np.cumsum(us * us, axis=1)
    before = np.take_along_axis(cum, np.maximum(start - 1, 0), axis=1)
    before2 = np.take_along_axis(cum2, np.maximum(start - 1, 0), axis=1)
    first_group = start == 0
    before[first_group] = 0.0
    before2[first_group] = 0.0
    # the anchor itself sits in the distance-zero group; remove it from the
    # prefix of every later group
    past_zero = ~first_group
    s = before - np.where(past_zero, u[:, None], 0.0)
    ss = before2 - np.where(past_zero, (u * u)[:, None], 0.0)
    valid = order != np.arange(n)[:, None]
    return us, s, ss, valid


def fccov_fast(u, idx: AnchorOrderIndex):
    """Statistic from a prebuilt anchor index, quadratic cost."""
    n = idx.n
    u = _as_scores(u, n)
    _, s, ss, valid = _prefix_tables(u, idx)
    total = np.sum((s * s - ss)[valid])
    return float(total / falling_factorial(n, 4))


def fccov_grad(u, idx: AnchorOrderIndex):
    """Gradient of :func:`fccov_fast` with respect to the scores.

    The statistic is the quadratic form ``u' M u / (n)_4`` with ``M``
    symmetric, zero-diagonal, and fixed by the distance comparisons, so the
    gradient is ``2 M u / (n)_4``; it is assembled in O(n^2) from suffix
    sums over each anchor's tie groups.
    """
    n = idx.n
    u = _as_scores(u, n)
    us, s, _, valid = _prefix_tables(u, idx)
    validf = valid.astype(float)
    q = s * validf
    # suffix sums indexed by position, padded so position n reads as zero
    q_suf = np.zeros((n, n + 1))
    q_suf[:, :n] = np.cumsum(q[:, ::-1], axis=1)[:, ::-1]
    w_suf = np.zeros((n, n + 1))
    w_suf[:, :n] = np.cumsum(validf[:, ::-1], axis=1)[:, ::-1]
    end = idx.group_end
    tail_s = np.take_along_axis(q_suf, end, axis=1)
    tail_count = np.take_along_axis(w_suf, end, axis=1)
    contrib = 2.0 * (tail_s - us * tail_count)
    grad = np.zeros(n)
    np.add.at(grad, idx.order[valid], contrib[valid])
    return grad / falling_factorial(n, 4)


def fccov_statistic(scores, d, method="fast"):
    """Center raw scores and evaluate the statistic.

    ``method`` selects the evaluation route: "fast", "slice", or "naive".
    Returns ``(value, centered_scores)``.
    """
    dv = _as_distances(d)
    u = center_scores(_as_scores(scores, dv.shape[0]))
    if method == "fast":
        value = fccov_fast(u, build_anchor_index(dv))
    elif method == "slice":
        value = fccov_slice(u, dv)
    elif method == "naive":
        value = fccov_naive(u, dv)
    else:
        raise ValueError(f"unknown method {method!r}")
    return value, u


@dataclass(frozen=True)
class PermutationTestResult:
    statistic: float
    p_value: float
    n_permutations: int
    degenerate: bool = False


def permutation_independence_test(scores, d, n_perm=199, seed=0):
    """Permutation p-value for dependence between scores and responses.

    Scores are centered internally and shuffled against the fixed distance
    structure; the p-value is ``(1 + #{permuted >= observed}) / (n_perm + 1)``.
    Constant scores make the statistic identically zero, which is reported
    with the ``degenerate`` flag and a p-value of 1.
    """
    if n_perm < 19:
        raise ValueError(f"need at least 19 permutations, got {n_perm}")
    dv = _as_distances(d)
    u = center_scores(_as_scores(scores, dv.shape[0]))
    if np.max(np.abs(u)) == 0.0:
        return PermutationTestResult(0.0, 1.0, n_perm, degenerate=True)
    idx = build_anchor_index(dv)
    observed = fccov_fast(u, idx)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_perm):
        if fccov_fast(rng.permutation(u), idx) >= observed:
            exceed += 1
    return PermutationTestResult(observed, (1 + exceed) / (n_perm + 1), n_perm)
