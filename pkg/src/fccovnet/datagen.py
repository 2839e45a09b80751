"""Seeded simulation designs with known ground-truth sufficient predictors.

Six designs are available, identified by ``SimulationSpec.model``:

* ``model-i`` / ``model-ii`` - Euclidean responses driven by one or two
  nonlinear functions of the predictors, with Gaussian noise; predictors
  follow scenario ``A`` (standard normal), ``B`` (AR(1)-correlated normal,
  lag correlation 0.5) or ``C`` (uniform on [-2, 2]).  Optional outlier
  contamination: case 1 replaces a fraction of the first predictor's draws
  with scaled Cauchy values before the responses are formed (the model
  link persists, the predictor becomes heavy-tailed); case 2 draws both
  models' noise at scale 0.25 and replaces a fraction of the noise rows
  with uniform draws on (-50, 50).  Contamination belongs to the training
  distribution; test sets from :func:`simulate_test` are generated clean,
  so evaluation measures recovery of the underlying structure.
* ``setting-i-1`` / ``setting-i-2`` - responses are one-dimensional normal
  distributions encoded as quantile grids at midpoint levels; the mean (and
  in the second setting the scale) depend on the predictors, which are
  uniform on [0, 1].
* ``setting-ii-1`` / ``setting-ii-2`` - responses are 2x2 / 3x3 SPD
  matrices: a symmetric matrix with predictor-dependent off-diagonal
  entries plus symmetric Gaussian noise, pushed through the matrix
  exponential (so positive definiteness holds by construction).

Every dataset is a pure function of its spec: the training set consumes the
stream seeded by ``(seed, 0)`` and test sets the stream seeded by
``(seed, 1)``, so train/test draws never overlap and regeneration is
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .metrics import ResponseSet, cholesky, matrix_exp

__all__ = [
    "SimulatedDataset",
    "SimulationSpec",
    "gaussian_quantile_grid",
    "midpoint_levels",
    "simulate",
    "simulate_test",
]

EUCLIDEAN_MODELS = ("model-i", "model-ii")
DISTRIBUTION_MODELS = ("setting-i-1", "setting-i-2")
SPD_MODELS = ("setting-ii-1", "setting-ii-2")
MODELS = EUCLIDEAN_MODELS + DISTRIBUTION_MODELS + SPD_MODELS

MIN_P = {
    "model-i": 2,
    "model-ii": 4,
    "setting-i-1": 2,
    "setting-i-2": 5,
    "setting-ii-1": 2,
    "setting-ii-2": 4,
}

TRUE_DIMENSION = {
    "model-i": 1,
    "model-ii": 2,
    "setting-i-1": 1,
    "setting-i-2": 2,
    "setting-ii-1": 1,
    "setting-ii-2": 2,
}


@dataclass(frozen=True)
class SimulationSpec:
    """Configuration of one simulated dataset."""

    model: str
    n: int = 1000
    p: int = 10
    scenario: str | None = None  # "A" | "B" | "C" for Euclidean models
    outlier_case: int | None = None  # 1 | 2, Euclidean models only
    outlier_rate: float = 0.0
    seed: int = 0
    grid_size: int = 21
    spd_noise: float = 0.2
    spd_metric: str = "log-cholesky"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; known: {MODELS}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < MIN_P[self.model]:
            raise ValueError(
                f"{self.model} needs p >= {MIN_P[self.model]}, got {self.p}"
            )
        scenario = self.scenario
        if self.model in EUCLIDEAN_MODELS:
            if scenario is None:
                scenario = "B" if self.outlier_case is not None else "A"
            else:
                scenario = scenario.upper()
            if scenario not in ("A", "B", "C"):
                raise ValueError(f"scenario must be A, B, or C, got {self.scenario!r}")
            if self.outlier_case is not None and scenario != "B":
                raise ValueError(
                    "outlier contamination draws lag-correlated predictors; scenario must be B"
                )
        else:
            scenario = "uniform01" if scenario is None else scenario
            if scenario != "uniform01":
                raise ValueError(
                    f"{self.model} draws uniform [0,1] predictors; scenario must be"
                    f" 'uniform01', got {self.scenario!r}"
                )
            if self.outlier_case is not None:
                raise ValueError("outlier contamination applies to Euclidean models only")
        object.__setattr__(self, "scenario", scenario)
        if self.outlier_case not in (None, 1, 2):
            raise ValueError(f"outlier case must be 1 or 2, got {self.outlier_case}")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError(f"outlier rate must lie in [0, 1), got {self.outlier_rate}")
        if self.outlier_rate > 0.0 and self.outlier_case is None:
            raise ValueError("outlier rate given without an outlier case")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if self.spd_metric not in ("log-cholesky", "affine-invariant"):
            raise ValueError(f"unknown SPD metric {self.spd_metric!r}")

    @property
    def true_dimension(self):
        return TRUE_DIMENSION[self.model]


@dataclass(frozen=True)
class SimulatedDataset:
    x: np.ndarray
    responses: ResponseSet
    truth: np.ndarray
    d0: int


def midpoint_levels(size):
    """Probability levels (2j-1)/(2*size), j = 1..size: midpoints of an
    equal partition of (0, 1), avoiding the endpoints."""
    return (2.0 * np.arange(1, size + 1) - 1.0) / (2.0 * size)


def gaussian_quantile_grid(mu, sigma, size):
    """Quantile function of N(mu, sigma^2) sampled at midpoint levels."""
    return mu + sigma * ndtri(midpoint_levels(size))


def simulate(spec: SimulationSpec) -> SimulatedDataset:
    """The training dataset of a spec (stream seeded by ``(seed, 0)``)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    return _generate(spec, spec.n, rng)


def simulate_test(spec: SimulationSpec, n_test=None) -> SimulatedDataset:
    """An independent clean dataset from the same design (stream ``(seed, 1)``).

    Defaults to 20% of the training size.  Outlier contamination, when the
    spec carries any, is not applied: it corrupts training data, while test
    data represent the underlying model.
    """
    if n_test is None:
        n_test = max(int(np.ceil(0.2 * spec.n)), 2)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    return _generate(clean_spec(spec), n_test, rng)


def _generate(spec, n, rng):
    if spec.model in EUCLIDEAN_MODELS:
        return _gen_euclidean(spec, n, rng)
    if spec.model in DISTRIBUTION_MODELS:
        return _gen_distribution(spec, n, rng)
    return _gen_spd(spec, n, rng)


# ---------------------------------------------------------------------------
# Euclidean responses
# ---------------------------------------------------------------------------

def _draw_predictors(spec, n, rng):
    p = spec.p
    if spec.scenario == "B":
        lag = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        x = rng.standard_normal((n, p)) @ cholesky(lag).T
    elif spec.scenario == "A":
        x = rng.standard_normal((n, p))
    else:  # C
        x = rng.uniform(-2.0, 2.0, size=(n, p))
    return x


def model_i_truth(x):
    return (x[:, 0] ** 2 / (1.0 + (0.1 + 0.5 * x[:, 1]) ** 2))[:, None]


def model_ii_truth(x):
    return np.column_stack([x[:, 2] / (x[:, 3] + 2.0), x[:, 0] ** 2])


def _gen_euclidean(spec, n, rng):
    x = _draw_predictors(spec, n, rng)
    if spec.outlier_case == 1 and spec.outlier_rate > 0.0:
        # heavy-tailed first predictor: scaled Cauchy via a normal ratio,
        # injected before the responses so the model link persists
        count = int(round(spec.outlier_rate * n))
        if count:
            rows = rng.choice(n, size=count, replace=False)
            x[rows, 0] = 2.0 * rng.standard_normal(count) / np.abs(
                rng.standard_normal(count)
            )
    if spec.model == "model-i":
        truth = model_i_truth(x)
        signal = np.column_stack([truth[:, 0], np.zeros(n), np.zeros(n)])
        noise_scale = 0.25
    else:
        truth = model_ii_truth(x)
        signal = truth.copy()
        noise_scale = 0.25 if spec.outlier_case == 2 else 0.1
    noise = noise_scale * rng.standard_normal(signal.shape)
    if spec.outlier_case == 2 and spec.outlier_rate > 0.0:
        count = int(round(spec.outlier_rate * n))
        if count:
            rows = rng.choice(n, size=count, replace=False)
            noise[rows] = rng.uniform(-50.0, 50.0, size=(count, signal.shape[1]))
    responses = ResponseSet.euclidean_vectors(signal + noise)
    return SimulatedDataset(x=x, responses=responses, truth=truth, d0=spec.true_dimension)


# ---------------------------------------------------------------------------
# Distributional responses (quantile grids)
# ---------------------------------------------------------------------------

def setting_i1_truth(x):
    b1 = 0.75 * x[:, 0] + 0.25 * x[:, 1]
    b2 = 0.25 * x[:, 0] + 0.75 * x[:, 1]
    return np.sin(4.0 * np.pi * b1 * (2.0 * b2 - 1.0))[:, None]


def setting_i2_parts(x):
    r = np.sqrt(x[:, 0] ** 2 + x[:, 1] ** 2)
    d1 = r * np.log(r)
    d2 = np.sin(0.1 * np.pi * (x[:, 3] + x[:, 4])) + x[:, 3] ** 2
    return d1, d2


def _gen_distribution(spec, n, rng):
    x = rng.uniform(0.0, 1.0, size=(n, spec.p))
    if spec.model == "setting-i-1":
        truth = setting_i1_truth(x)
        mu = truth[:, 0] + 0.1 * rng.standard_normal(n)
        sigma = np.ones(n)
    else:
        d1, d2 = setting_i2_parts(x)
        truth = np.column_stack([d1, np.abs(d2)])
        mu = d1 + 0.1 * rng.standard_normal(n)
        sigma = np.abs(d2)
    base = ndtri(midpoint_levels(spec.grid_size))
    grids = mu[:, None] + sigma[:, None] * base[None, :]
    responses = ResponseSet.quantile_grids(grids)
    return SimulatedDataset(x=x, responses=responses, truth=truth, d0=spec.true_dimension)


# ---------------------------------------------------------------------------
# SPD responses
# ---------------------------------------------------------------------------

def setting_ii1_truth(x):
    b = 0.5 * x[:, 0] + 0.5 * x[:, 1]
    return np.sin(4.0 * np.pi * b * (2.0 * b - 1.0))[:, None]


def setting_ii2_parts(x):
    z1 = x[:, 0] / (1.0 + np.sqrt(np.abs(x[:, 1])))
    z2 = np.sin(x[:, 2] ** 2) + np.exp(x[:, 3] ** 2)
    return z1, z2


def _symmetric_noise(rng, m):
    # (A + A') / 2 has unit-variance diagonal and variance-1/2 off-diagonal
    # entries, and is symmetric bit-for-bit
    a = rng.standard_normal((m, m))
    return 0.5 * (a + a.T)


def _gen_spd(spec, n, rng):
    x = rng.uniform(0.0, 1.0, size=(n, spec.p))
    if spec.model == "setting-ii-1":
        truth = setting_ii1_truth(x)
        m = 2
        logs = np.empty((n, m, m))
        for i in range(n):
            z = truth[i, 0]
            logs[i] = np.array([[1.0, z], [z, 1.0]])
    else:
        z1, z2 = setting_ii2_parts(x)
        truth = np.column_stack([z1, z2])
        m = 3
        logs = np.empty((n, m, m))
        for i in range(n):
            a, b = z1[i], z2[i]
            logs[i] = np.array([[1.0, a, b], [a, 1.0, a], [b, a, 1.0]])
    mats = np.empty_like(logs)
    for i in range(n):
        mats[i] = matrix_exp(logs[i] + spec.spd_noise * _symmetric_noise(rng, m))
    responses = ResponseSet.spd_matrices(mats, metric=spec.spd_metric)
    return SimulatedDataset(x=x, responses=responses, truth=truth, d0=spec.true_dimension)


def clean_spec(spec: SimulationSpec) -> SimulationSpec:
    """The same design with outlier contamination switched off."""
    return replace(spec, outlier_case=None, outlier_rate=0.0)
