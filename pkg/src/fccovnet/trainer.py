"""Minibatch training of the dependence objective, plus the dimension heuristic.

One run: precompute the full response distance matrix, then repeatedly draw
batches (a shuffled partition of the sample, reshuffled when exhausted),
build the batch's anchor index, evaluate the batch loss and its exact
gradient, backpropagate through the network, and apply one Adam step.
Everything is deterministic given the config seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TrainingDivergedError
from .fccov import (
    build_anchor_index,
    center_scores,
    fccov_fast,
    permutation_independence_test,
)
from .metrics import ResponseSet, pairwise_distances
from .networks import AdamState, CnnSpec, FnnSpec, NetworkModel, adam_step
from .objective import PenaltyConfig, batch_loss

__all__ = [
    "DimensionEstimate",
    "TrainConfig",
    "TrainReport",
    "component_statistics",
    "default_architecture",
    "estimate_dimension",
    "train",
]


def default_architecture(p, d) -> FnnSpec:
    """Practical fully connected preset for input width p and output width d.

    Widths rise from p through ``2**(k+1)`` to the peak ``2**(k+2)`` with
    ``k = floor(log2(p))``, then halve back down to 16, then d.
    """
    if p < 1 or d < 1:
        raise ValueError("p and d must be positive")
    k = int(math.floor(math.log2(p))) if p > 1 else 0
    widths = [p, 2 ** (k + 1), 2 ** (k + 2)]
    widths += [2**j for j in range(k + 1, 3, -1)]
    widths.append(d)
    return FnnSpec(tuple(widths))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    Batch size, iterations per epoch, the optimizer, and the learning rate
    follow the published experiment protocol.  The penalty weight and the
    epoch budget are not stated there; the defaults here were fixed
    empirically across the simulation designs: lam = 0.15 keeps the
    per-batch penalty gradient noise from drowning the dependence signal
    (large lam stalls training for hundreds of epochs) while still holding
    the held-out output covariance near the identity, and 80 epochs (8000
    steps) gives slow-burning designs time to converge without eroding the
    fast ones past their generalization peak.
    """

    d: int = 1
    lam: float = 0.15
    batch_size: int = 100
    epochs: int = 80
    iters_per_epoch: int = 100
    lr: float = 1e-3
    seed: int = 0
    architecture: FnnSpec | CnnSpec | None = None
    separate_components: bool = False
    penalty: str = "plug-in"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("structural dimension d must be >= 1")
        if self.batch_size < 5:
            raise ValueError("batch size must be >= 5")
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.lam < 0.0:
            raise ValueError("penalty weight must be nonnegative")
        if self.epochs < 1 or self.iters_per_epoch < 1:
            raise ValueError("epochs and iters_per_epoch must be >= 1")

    def penalty_config(self):
        return PenaltyConfig(lam=self.lam, estimator=self.penalty)


@dataclass
class TrainReport:
    """Everything produced by one run."""

    model: NetworkModel
    loss_trace: np.ndarray
    component_trace: np.ndarray
    final_penalty: float
    elapsed: float
    config: TrainConfig


class _BatchStream:
    """Batches without replacement: a shuffled partition, reshuffled once
    exhausted; a trailing remainder shorter than the batch size is dropped."""

    def __init__(self, n, batch_size, rng):
        if n < batch_size:
            raise ValueError(f"sample size {n} is smaller than batch size {batch_size}")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._queue = []

    def __next__(self):
        if not self._queue:
            perm = self.rng.permutation(self.n)
            full = self.n // self.batch_size
            self._queue = [
                perm[i * self.batch_size : (i + 1) * self.batch_size]
                for i in range(full)
            ]
        return self._queue.pop(0)


def _resolve_model(cfg: TrainConfig, p):
    arch = cfg.architecture
    if arch is None:
        arch = default_architecture(p, 1 if cfg.separate_components else cfg.d)
    if arch.input_dim != p:
        raise ValueError(
            f"architecture expects {arch.input_dim} inputs, data has {p}"
        )
    if cfg.separate_components:
        if arch.output_dim != 1:
            raise ValueError("separate components need single-output architectures")
        specs = tuple(arch for _ in range(cfg.d))
    else:
        if arch.output_dim != cfg.d:
            raise ValueError(
                f"architecture emits {arch.output_dim} outputs, config wants d={cfg.d}"
            )
        specs = (arch,)
    return NetworkModel(specs, seed=cfg.seed)


def train(x, responses: ResponseSet, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """Fit the network to maximize per-component dependence on the responses.

    ``x`` is the (n, p) predictor matrix and ``responses`` the matching
    response collection.  Raises :class:`TrainingDivergedError` if the loss
    or gradient goes non-finite.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"predictors must be an (n, p) matrix, got {x.shape}")
    n = x.shape[0]
    if responses.n != n:
        raise ValueError(f"{n} predictor rows but {responses.n} responses")
    start = time.perf_counter()
    model = _resolve_model(cfg, x.shape[1])
    dist = pairwise_distances(responses).values
    stream = _BatchStream(n, cfg.batch_size, np.random.default_rng([cfg.seed, 1]))
    pen_cfg = cfg.penalty_config()
    state = AdamState.zeros(model.n_params)
    total_iters = cfg.epochs * cfg.iters_per_epoch
    loss_trace = np.empty(total_iters)
    component_trace = np.empty((total_iters, cfg.d))
    final_penalty = np.nan
    for it in range(total_iters):
        batch = next(stream)
        idx = build_anchor_index(dist[np.ix_(batch, batch)])
        outputs, caches = model.forward(x[batch])
        res = batch_loss(outputs, idx, pen_cfg)
        if not np.isfinite(res.value):
            raise TrainingDivergedError(
                "loss is non-finite",
                iteration=it,
                grad_norm=float(np.linalg.norm(res.grad)),
            )
        grad = model.backward(caches, res.grad)
        try:
            state, model.params = adam_step(state, model.params, grad, cfg.lr)
        except Exception as exc:
            raise TrainingDivergedError(
                f"optimizer rejected the update: {exc}",
                iteration=it,
                grad_norm=float(np.linalg.norm(grad)),
            ) from exc
        loss_trace[it] = res.value
        component_trace[it] = res.components
        final_penalty = res.penalty
    return TrainReport(
        model=model,
        loss_trace=loss_trace,
        component_trace=component_trace,
        final_penalty=float(final_penalty),
        elapsed=time.perf_counter() - start,
        config=cfg,
    )


def component_statistics(model: NetworkModel, x, responses: ResponseSet):
    """Per-component dependence statistic of the model's outputs on a dataset."""
    x = np.asarray(x, dtype=float)
    outputs = model.predict(x)
    idx = build_anchor_index(pairwise_distances(responses).values)
    return np.array(
        [fccov_fast(center_scores(outputs[:, t]), idx) for t in range(outputs.shape[1])]
    )


@dataclass(frozen=True)
class DimensionEstimate:
    d_hat: int
    components: np.ndarray  # held-out statistics, sorted descending
    degenerate: bool = False


def estimate_dimension(
    x,
    responses: ResponseSet,
    d_max=5,
    cfg: TrainConfig | None = None,
    eps=None,
    holdout_fraction=0.2,
) -> DimensionEstimate:
    """Eigengap heuristic for the structural dimension.

    Trains once with ``d_max`` components on a random 80% of the data,
    evaluates the per-component statistic on the held-out 20%, sorts the
    values descending, and returns the position of the largest ratio
    ``l_j / (l_{j+1} + eps)`` (values clamped at zero).  ``eps`` defaults
    to half the leading component's value: trailing components sit at the
    permutation-null scale, where a fixed tiny offset would let null-to-null
    ratios explode and dominate the argmax; damping by the leader's scale
    makes the ratio respond to gaps that are large relative to the signal.
    When even the strongest component is indistinguishable from the
    permutation null at level 0.05 (Bonferroni-corrected for picking the
    best of ``d_max``), the estimate is 0 with ``degenerate=True``.
    """
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    base = cfg if cfg is not None else TrainConfig()
    run_cfg = replace(base, d=d_max, architecture=None)
    split_rng = np.random.default_rng([run_cfg.seed, 2])
    perm = split_rng.permutation(n)
    n_hold = max(int(round(holdout_fraction * n)), 5)
    hold, fit = perm[:n_hold], perm[n_hold:]
    report = train(x[fit], responses.take(fit), run_cfg)
    outputs = report.model.predict(x[hold])
    hold_responses = responses.take(hold)
    idx = build_anchor_index(pairwise_distances(hold_responses).values)
    stats = np.array(
        [fccov_fast(center_scores(outputs[:, t]), idx) for t in range(d_max)]
    )
    order = np.argsort(stats)[::-1]
    stats = stats[order]
    strongest = permutation_independence_test(
        outputs[:, order[0]], pairwise_distances(hold_responses), n_perm=199,
        seed=run_cfg.seed,
    )
    if strongest.degenerate or strongest.p_value > 0.05 / d_max:
        return DimensionEstimate(d_hat=0, components=stats, degenerate=True)
    if d_max == 1:
        return DimensionEstimate(d_hat=1, components=stats)
    clamped = np.maximum(stats, 0.0)
    if eps is None:
        eps = 0.5 * clamped[0]
    ratios = clamped[:-1] / (clamped[1:] + eps)
    return DimensionEstimate(d_hat=int(np.argmax(ratios)) + 1, components=stats)
