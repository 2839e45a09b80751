"""Nonlinear sufficient dimension reduction for metric-space responses.

The package trains small neural networks to extract a low-dimensional
representation of Euclidean predictors that preserves the conditional-mean
information about a response living in a metric space (vectors,
one-dimensional distributions, SPD matrices, probability vectors, or any
precomputed distance structure).  The training signal is a rank-based
dependence statistic between each learned component and the response
distances, regularized toward identity output covariance.
"""

__version__ = "0.1.0"

from .datagen import SimulatedDataset, SimulationSpec, simulate, simulate_test
from .errors import NotPositiveDefiniteError, NumericalError, TrainingDivergedError
from .evaluation import distance_correlation, kappa_distance
from .fccov import (
    AnchorOrderIndex,
    build_anchor_index,
    center_scores,
    fccov_fast,
    fccov_grad,
    fccov_naive,
    fccov_slice,
    fccov_statistic,
    permutation_independence_test,
)
from .metrics import (
    DistanceMatrix,
    ResponseSet,
    SpdMatrix,
    affine_invariant,
    cholesky,
    hellinger,
    log_cholesky,
    matrix_exp,
    matrix_log,
    pairwise_distances,
    sym_eig,
    total_variation,
    wasserstein2,
)
from .networks import CnnSpec, FnnSpec, NetworkModel, load_checkpoint, save_checkpoint
from .objective import PenaltyConfig, batch_loss, penalty_plugin, penalty_ustat
from .trainer import (
    TrainConfig,
    TrainReport,
    default_architecture,
    estimate_dimension,
    train,
)

__all__ = [
    "__version__",
    "AnchorOrderIndex",
    "CnnSpec",
    "DistanceMatrix",
    "FnnSpec",
    "NetworkModel",
    "NotPositiveDefiniteError",
    "NumericalError",
    "PenaltyConfig",
    "ResponseSet",
    "SimulatedDataset",
    "SimulationSpec",
    "SpdMatrix",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "affine_invariant",
    "batch_loss",
    "build_anchor_index",
    "center_scores",
    "cholesky",
    "default_architecture",
    "distance_correlation",
    "estimate_dimension",
    "fccov_fast",
    "fccov_grad",
    "fccov_naive",
    "fccov_slice",
    "fccov_statistic",
    "hellinger",
    "kappa_distance",
    "load_checkpoint",
    "log_cholesky",
    "matrix_exp",
    "matrix_log",
    "pairwise_distances",
    "penalty_plugin",
    "penalty_ustat",
    "permutation_independence_test",
    "save_checkpoint",
    "simulate",
    "simulate_test",
    "sym_eig",
    "total_variation",
    "train",
    "wasserstein2",
]
