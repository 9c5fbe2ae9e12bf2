"""Linearly alignable embeddings via coupled autoencoders and closed-form
Gaussian optimal transport."""

from .errors import (
    InvalidInput,
    InvalidState,
    LinalignError,
    NotConverged,
    NumericalFailure,
)
from .gaussian import (
    AffineMap,
    GaussianStats,
    apply_map,
    bures_wasserstein_sq,
    estimate_stats,
    fit_linear_monge,
    invert_map,
    matrix_sqrt_sym,
    pushforward_stats,
)
from .discrete import (
    Coupling,
    PointCloud,
    barycentric_map,
    cost_matrix,
    exact_emd,
    sinkhorn,
    w2_empirical,
)
from .training import (
    CoupledAutoencoders,
    ExperimentConfig,
    alignment_loss,
    encode,
    init_model,
    invariant_baseline_train,
    train,
    transfer,
)
from .evaluation import (
    EvalReport,
    LabeledDataset,
    emd_barycentric_baseline,
    evaluate_transfer,
    knn_predict,
    ot_gauss_baseline,
    reverse_validation_score,
    worst_case_bound_diag,
)
from .datasets import gen_synthetic, load_dataset

__version__ = "0.1.0"
