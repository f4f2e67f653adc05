"""dgpkit: scalable GP regression with local experts and fused predictions."""

from .aggregation import (
    AggregateResult,
    AugmentedPredictions,
    augmented_posteriors,
    augmented_predictions,
    bcm,
    gpoe,
    grbcm,
    grbcm_combine,
    poe,
    predict_augmented,
    rbcm,
    shared_hyperparams,
)
from .bench import BenchmarkResult, BenchmarkSpec, full_gp_oracle, run_benchmark
from .data import gen_toy, load_csv, toy_function, write_csv
from .dependency import (
    ClusterAssignment,
    PrecisionEstimate,
    build_laplacian,
    expert_precision,
    graphical_lasso,
    sample_covariance,
    spectral_clustering,
)
from .dgea import ClusterExpert, DgeaConfig, cluster_fuse, dgea_pipeline, dgea_predict
from .experts import (
    ExpertPredictions,
    Partitioning,
    TrainedExpert,
    factorized_objective,
    partition,
    predict_experts,
    train_experts,
)
from .gp import (
    Dataset,
    Hyperparams,
    NormStats,
    NumericalError,
    OptimizerConfig,
    PosteriorGP,
    default_init,
    fit_hyperparams,
    gp_predict,
    kernel_matrix,
    log_marginal_likelihood,
    normalize,
    transform_with,
)
from .metrics import msll, smse

__version__ = "0.1.0"
