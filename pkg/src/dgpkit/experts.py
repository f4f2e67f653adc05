"""Partition a training set and train one local GP expert per partition.

Default training fits a single hyperparameter vector shared by all
experts, maximizing the factorized objective

    sum_i log p(y_i | X_i, theta)

over the partitions; an independent per-expert fit is available as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import backends
from .gp import (
    Dataset,
    Hyperparams,
    NumericalError,
    OptimizerConfig,
    PosteriorGP,
    _LOG_BOUND,
    default_init,
    gp_predict,
    log_marginal_likelihood,
)

PARTITION_SCHEMES = ("random", "disjoint")


@dataclass(frozen=True)
class Partitioning:
    """Assignment of every training point to one of n_experts partitions."""

    assignments: np.ndarray
    n_experts: int
    scheme: str
    seed: int

    def __post_init__(self):
        a = np.ascontiguousarray(self.assignments, dtype=np.int64)
        object.__setattr__(self, "assignments", a)

    def indices_of(self, expert_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == expert_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_experts)


def partition(data: Dataset, n_experts: int, scheme: str = "random", seed: int = 0) -> Partitioning:
    """Split the dataset into n_experts nonempty partitions.

    random: seeded shuffle followed by a round-robin split (sizes differ
    by at most one). disjoint: seeded k-means on the inputs, one cluster
    per partition.
    """
    if scheme not in PARTITION_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {PARTITION_SCHEMES}")
    n = data.n
    if not 1 <= n_experts <= n:
        raise ValueError(f"need 1 <= n_experts <= n, got n_experts={n_experts}, n={n}")
    if scheme == "random":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        assignments = np.empty(n, dtype=np.int64)
        assignments[perm] = np.arange(n) % n_experts
    else:
        assignments = backends.kmeans(
            data.inputs, n_experts, seed=seed, restarts=1, max_iter=50, ensure_nonempty=True
        ).astype(np.int64)
    return Partitioning(assignments, n_experts, scheme, seed)


@dataclass(frozen=True)
class TrainedExpert:
    expert_id: int
    point_indices: np.ndarray
    hyperparams: Hyperparams
    posterior: PosteriorGP


def factorized_objective(data: Dataset, parts: Partitioning, params: Hyperparams):
    """Sum of per-partition log-marginal likelihoods and its gradient."""
    total = 0.0
    grad = np.zeros(params.dim + 2)
    for i in range(parts.n_experts):
        value, g = log_marginal_likelihood(data.subset(parts.indices_of(i)), params)
        total += value
        grad += g
    return total, grad


def _fit_shared(subsets, init: Hyperparams, cfg: OptimizerConfig) -> Hyperparams:
    def objective(u):
        params = Hyperparams.from_log_vector(u)
        total = 0.0
        grad = np.zeros_like(u)
        try:
            for sub in subsets:
                value, g = log_marginal_likelihood(sub, params)
                total += value
                grad += g
        except NumericalError:
            return 1e25, np.zeros_like(u)
        if not np.isfinite(total):
            return 1e25, np.zeros_like(u)
        return -total, -grad

    u0 = init.log_vector()
    f0, g0 = objective(u0)
    if f0 >= 1e25:
        raise ValueError("factorized objective is not finite at the initial hyperparameters")
    if np.max(np.abs(g0)) < cfg.grad_tol:
        return init
    res = minimize(
        objective,
        u0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(-_LOG_BOUND, _LOG_BOUND)] * u0.shape[0],
        options={"maxiter": cfg.max_iter, "gtol": cfg.grad_tol, "ftol": 1e-12},
    )
    if not np.isfinite(res.fun) or res.fun > f0:
        return init
    return Hyperparams.from_log_vector(res.x)


def train_experts(
    data: Dataset,
    parts: Partitioning,
    opt_cfg: OptimizerConfig | None = None,
    shared: bool = True,
) -> list[TrainedExpert]:
    """Fit hyperparameters and build one posterior per partition.

    shared=True (default) fits one theta on the factorized objective and
    gives it to every expert; shared=False fits each expert independently
    on its own partition.
    """
    cfg = opt_cfg or OptimizerConfig()
    index_sets = [parts.indices_of(i) for i in range(parts.n_experts)]
    if any(idx.size == 0 for idx in index_sets):
        raise ValueError("every partition must own at least one point")
    subsets = [data.subset(idx) for idx in index_sets]
    experts = []
    if shared:
        params = _fit_shared(subsets, default_init(data), cfg)
        for i, (idx, sub) in enumerate(zip(index_sets, subsets)):
            experts.append(TrainedExpert(i, idx, params, PosteriorGP.build(sub, params)))
    else:
        from .gp import fit_hyperparams

        for i, (idx, sub) in enumerate(zip(index_sets, subsets)):
            params = fit_hyperparams(sub, default_init(sub), cfg)
            experts.append(TrainedExpert(i, idx, params, PosteriorGP.build(sub, params)))
    return experts


@dataclass(frozen=True)
class ExpertPredictions:
    """Per-expert predictive means/variances at the test inputs.

    Column i belongs to expert ``expert_ids[i]``. Variances are predictive
    for a new observation (latent variance plus that expert's noise), so
    an expert far from its data reverts to ``prior_variance[i]`` =
    signal variance + noise variance.
    """

    means: np.ndarray
    variances: np.ndarray
    prior_variance: np.ndarray
    expert_ids: np.ndarray

    @property
    def n_experts(self):
        return self.means.shape[1]

    def select(self, columns) -> "ExpertPredictions":
        cols = np.asarray(columns)
        return ExpertPredictions(
            self.means[:, cols], self.variances[:, cols], self.prior_variance[cols], self.expert_ids[cols]
        )


def predict_experts(experts: list[TrainedExpert], x_star, include_noise: bool = True) -> ExpertPredictions:
    """Evaluate every expert at the test inputs; one column per expert."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    n_t = x_star.shape[0]
    m = len(experts)
    means = np.empty((n_t, m))
    variances = np.empty((n_t, m))
    prior = np.empty(m)
    ids = np.empty(m, dtype=np.int64)
    for j, expert in enumerate(experts):
        mean, var = gp_predict(expert.posterior, x_star)
        noise = expert.hyperparams.noise_variance
        means[:, j] = mean
        variances[:, j] = var + (noise if include_noise else 0.0)
        prior[j] = expert.hyperparams.signal_variance + (noise if include_noise else 0.0)
        ids[j] = expert.expert_id
    return ExpertPredictions(means, variances, prior, ids)
