"""Training objective: dependence reward plus identity-covariance penalty.

The loss over a batch of network outputs ``f`` (B rows, d columns) is

    loss = - sum_t stat(f_t | responses) + lambda * penalty(f),

where ``stat`` is the rank-based dependence statistic of :mod:`.fccov`
applied to each centered output column against the batch's response
distances, and ``penalty`` estimates ``||Var(f) - I_d||_F^2``.

Two penalty estimators are provided.  The plug-in form uses the empirical
covariance directly and is the training default (smooth, cheap, with a
closed-form gradient).  The U-statistic form averages a symmetric 4-point
kernel over all ordered 4-tuples of batch rows; under the population
zero-mean convention its expectation equals ``||Var(f) - I_d||_F^2``
exactly, which makes it the reporting/verification estimator.  The 4-tuple
average collapses algebraically to pairwise moment sums, so it costs
O(B d^2) rather than O(B^4).

The response-driven coefficients of the dependence term are constants with
respect to the outputs, so the whole loss is an exact polynomial in ``f``
(quadratic from the dependence term, quartic from the penalty) and all
gradients here are exact, not approximations.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .fccov import AnchorOrderIndex, fccov_fast, fccov_grad

__all__ = [
    "BatchLossResult",
    "PenaltyConfig",
    "batch_loss",
    "center_columns",
    "h2_kernel",
    "penalty_plugin",
    "penalty_ustat",
    "penalty_ustat_grad",
]

MIN_BATCH = 5


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weight and estimator choice ("plug-in" or "u-statistic")."""

    lam: float = 1.0
    estimator: str = "plug-in"

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError(f"penalty weight must be nonnegative, got {self.lam}")
        if self.estimator not in ("plug-in", "u-statistic"):
            raise ValueError(f"unknown penalty estimator {self.estimator!r}")


def center_columns(f):
    """Remove column means from a (B, d) output matrix."""
    f = _as_outputs(f)
    return f - f.mean(axis=0, keepdims=True)


def _as_outputs(f, min_rows=2):
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2:
        raise ValueError(f"expected a (B, d) output matrix, got shape {f.shape}")
    if f.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {f.shape[0]}")
    return f


def h2_kernel(rows):
    """Symmetric 4-point kernel whose mean estimates ``||Var(f) - I_d||_F^2``.

    ``rows`` are four d-dimensional output vectors, shape (4, d).  The
    kernel averages squared-output products over the 12 ordered index pairs,
    subtracts half the sum of squared outputs over the 4 singletons, adds
    ``d``, and adds the analogous cross-column pair average; it is symmetric
    under any permutation of its four arguments.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] != 4:
        raise ValueError(f"expected four rows, got shape {rows.shape}")
    d = rows.shape[1]
    sq = rows * rows
    value = float(d)
    pair_idx = list(permutations(range(4), 2))
    for t in range(d):
        pair_sum = sum(sq[i, t] * sq[j, t] for i, j in pair_idx)
        value += pair_sum / 12.0 - 0.5 * np.sum(sq[:, t])
    for s in range(d):
        for t in range(s + 1, d):
            cross = sum(
                rows[i, s] * rows[j, s] * rows[i, t] * rows[j, t] for i, j in pair_idx
            )
            value += cross / 6.0
    return value


def penalty_ustat(f):
    """Average of :func:`h2_kernel` over all ordered 4-tuples of batch rows.

    Evaluated through the algebraic reduction to pairwise moment sums:
    with T_t = sum_a f_at^2, Q_t = sum_a f_at^4, C = f'f and
    R = (f^2)'(f^2),

        value = sum_t [ (T_t^2 - Q_t) / (B(B-1)) - 2 T_t / B ] + d
                + sum_{s<t} 2 (C_st^2 - R_st) / (B(B-1)).

    Unbiased for ``||Var(f) - I_d||_F^2`` when the rows are drawn from a
    mean-zero population.
    """
    f = _as_outputs(f, min_rows=MIN_BATCH)
    b, d = f.shape
    sq = f * f
    t_mom = sq.sum(axis=0)
    q_mom = (sq * sq).sum(axis=0)
    value = float(np.sum((t_mom * t_mom - q_mom) / (b * (b - 1)) - 2.0 * t_mom / b) + d)
    if d > 1:
        c_mom = f.T @ f
        r_mom = sq.T @ sq
        upper = np.triu_indices(d, 1)
        value += float(
            np.sum(2.0 * (c_mom[upper] ** 2 - r_mom[upper]) / (b * (b - 1)))
        )
    return value


def penalty_ustat_grad(f):
    """Gradient of :func:`penalty_ustat` with respect to the raw rows."""
    f = _as_outputs(f, min_rows=MIN_BATCH)
    b, _ = f.shape
    c_mom = f.T @ f
    row_sq = np.sum(f * f, axis=1, keepdims=True)
    return 4.0 * (f @ c_mom - f * row_sq) / (b * (b - 1)) - 4.0 * f / b


def penalty_plugin(f):
    """Plug-in penalty ``||Sigma_hat - I_d||_F^2`` and its gradient.

    ``Sigma_hat`` is the empirical covariance of the rows (columns centered,
    normalized by B).  The returned gradient is with respect to the raw,
    uncentered rows; the centering Jacobian is already folded in.
    """
    f = _as_outputs(f)
    b, d = f.shape
    centered = f - f.mean(axis=0, keepdims=True)
    sigma = centered.T @ centered / b
    delta = sigma - np.eye(d)
    value = float(np.sum(delta * delta))
    grad = (4.0 / b) * centered @ delta
    return value, grad


@dataclass(frozen=True)
class BatchLossResult:
    value: float
    grad: np.ndarray
    components: np.ndarray  # dependence statistic per output column
    penalty: float


def batch_loss(outputs, idx: AnchorOrderIndex, config: PenaltyConfig = PenaltyConfig()):
    """Loss and exact gradient for one batch of network outputs.

    ``idx`` must be the anchor index of the batch's response distances and
    its size must match the batch.  Output columns are centered before the
    dependence statistic, and the centering Jacobian is applied to every
    gradient path, so adding a constant vector to all rows leaves the loss
    unchanged.
    """
    f = _as_outputs(outputs, min_rows=MIN_BATCH)
    b, d = f.shape
    if idx.n != b:
        raise ValueError(f"anchor index is for {idx.n} samples, batch has {b}")
    centered = f - f.mean(axis=0, keepdims=True)
    components = np.empty(d)
    grad = np.empty_like(f)
    for t in range(d):
        components[t] = fccov_fast(centered[:, t], idx)
        g = fccov_grad(centered[:, t], idx)
        grad[:, t] = -(g - g.mean())
    if config.estimator == "plug-in":
        pen_value, pen_grad = penalty_plugin(f)
    else:
        pen_value = penalty_ustat(centered)
        g = penalty_ustat_grad(centered)
        pen_grad = g - g.mean(axis=0, keepdims=True)
    value = float(-np.sum(components) + config.lam * pen_value)
    grad += config.lam * pen_grad
    return BatchLossResult(value=value, grad=grad, components=components, penalty=pen_value)
