"""Closed-form fusion of local GP experts into one predictive distribution.

All rules operate pointwise on per-expert predictive means m_i and
variances v_i at each test input:

    poe:    1/v = sum_i 1/v_i
    gpoe:   1/v = sum_i beta_i / v_i
    bcm:    1/v = sum_i 1/v_i + (1 - M) / prior
    rbcm:   1/v = sum_i beta_i / v_i + (1 - sum_i beta_i) / prior
    grbcm:  experts are re-trained on their partition augmented with a
            distinguished base partition; the base corrects the fused
            precision the way the prior does in rbcm.

The fused mean is always the matching precision-weighted combination.
Entropy weights beta_i = 0.5 * (log prior_i - log v_i), clamped at zero
so that numerical noise can never flip an expert's influence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .experts import ExpertPredictions, Partitioning, TrainedExpert, _fit_shared
from .gp import Dataset, Hyperparams, OptimizerConfig, PosteriorGP, fit_hyperparams, gp_predict


@dataclass(frozen=True)
class AggregateResult:
    """Fused predictive mean/variance plus the weights that produced it.

    ``fallback_mask`` marks test points where the fused precision was not
    positive and the prior was substituted; it is None when the rule
    cannot produce that pathology.
    """

    means: np.ndarray
    variances: np.ndarray
    method: str
    weights_used: np.ndarray
    fallback_mask: np.ndarray | None = None

    @property
    def fallback_count(self) -> int:
        return 0 if self.fallback_mask is None else int(self.fallback_mask.sum())


def _check_preds(preds: ExpertPredictions):
    v = preds.variances
    if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
        raise ValueError("expert variances must be finite and strictly positive")


def _prior_scalar(preds: ExpertPredictions) -> float:
    # With shared hyperparameters all entries agree; with independent fits
    # the correction uses the mean prior precision.
    return float(1.0 / np.mean(1.0 / preds.prior_variance))


def poe(preds: ExpertPredictions) -> AggregateResult:
    """Product of experts: precisions add."""
    _check_preds(preds)
    prec = np.sum(1.0 / preds.variances, axis=1)
    var = 1.0 / prec
    mean = var * np.sum(preds.means / preds.variances, axis=1)
    weights = np.ones_like(preds.means)
    return AggregateResult(mean, var, "poe", weights)


def entropy_weights(preds: ExpertPredictions) -> np.ndarray:
    """Per-point differential-entropy gap between prior and expert, >= 0."""
    beta = 0.5 * (np.log(preds.prior_variance) - np.log(preds.variances))
    return np.clip(beta, 0.0, None)


def gpoe(preds: ExpertPredictions, weight_rule: str = "uniform") -> AggregateResult:
    """Generalized product of experts with uniform (1/M) or entropy weights."""
    _check_preds(preds)
    if weight_rule == "uniform":
        beta = np.full_like(preds.means, 1.0 / preds.n_experts)
    elif weight_rule == "entropy":
        beta = entropy_weights(preds)
    else:
        raise ValueError(f"unknown weight rule {weight_rule!r}")
    prec = np.sum(beta / preds.variances, axis=1)
    mean_num = np.sum(beta * preds.means / preds.variances, axis=1)
    return _finalize("gpoe-" + weight_rule, prec, mean_num, _prior_scalar(preds), beta)


def bcm(preds: ExpertPredictions) -> AggregateResult:
    """Bayesian committee machine: poe with the overcounted prior removed."""
    _check_preds(preds)
    m = preds.n_experts
    prior = _prior_scalar(preds)
    prec = np.sum(1.0 / preds.variances, axis=1) + (1.0 - m) / prior
    mean_num = np.sum(preds.means / preds.variances, axis=1)
    return _finalize("bcm", prec, mean_num, prior, np.ones_like(preds.means))


def rbcm(preds: ExpertPredictions) -> AggregateResult:
    """Robust BCM: entropy weights in both the sum and the prior correction."""
    _check_preds(preds)
    prior = _prior_scalar(preds)
    beta = entropy_weights(preds)
    prec = np.sum(beta / preds.variances, axis=1) + (1.0 - beta.sum(axis=1)) / prior
    mean_num = np.sum(beta * preds.means / preds.variances, axis=1)
    return _finalize("rbcm", prec, mean_num, prior, beta)


def _finalize(method, prec, mean_num, prior_var, weights):
    """Turn a fused precision / mean numerator into a result, substituting
    the prior (zero mean, prior variance) wherever precision is invalid."""
    bad = ~np.isfinite(prec) | (prec <= 0.0)
    if bad.any():
        prec = np.where(bad, 1.0 / prior_var, prec)
        mean_num = np.where(bad, 0.0, mean_num)
        mask = bad
    else:
        mask = None
    var = 1.0 / prec
    mean = var * mean_num
    return AggregateResult(mean, var, method, weights, mask)


# ---------------------------------------------------------------------------
# GRBCM: a base partition is merged into every other partition, experts are
# rebuilt on the merged data, and the base expert replaces the prior in the
# rbcm-style correction. beta is 1 for the first (lowest-id) non-base expert
# and the entropy gap against the base for the rest.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentedPosteriors:
    """Posteriors of the base expert and of every base-augmented expert."""

    base_id: int
    base_posterior: PosteriorGP
    expert_ids: np.ndarray  # non-base ids, ascending
    posteriors: list
    params: Hyperparams


@dataclass(frozen=True)
class AugmentedPredictions:
    """Base-expert and augmented-expert predictions at the test inputs."""

    base_id: int
    base_mean: np.ndarray
    base_var: np.ndarray
    expert_ids: np.ndarray  # non-base ids, ascending
    means: np.ndarray  # (n_t, M-1)
    variances: np.ndarray
    prior_variance: float
    params: Hyperparams


def shared_hyperparams(data: Dataset, parts: Partitioning, opt_cfg: OptimizerConfig | None = None) -> Hyperparams:
    """Fit one hyperparameter vector on the factorized partition objective."""
    from .gp import default_init

    cfg = opt_cfg or OptimizerConfig()
    subsets = [data.subset(parts.indices_of(i)) for i in range(parts.n_experts)]
    return _fit_shared(subsets, default_init(data), cfg)


def augmented_posteriors(
    data: Dataset,
    parts: Partitioning,
    params: Hyperparams,
    base_id: int = 0,
    refit: bool = False,
    opt_cfg: OptimizerConfig | None = None,
) -> AugmentedPosteriors:
    """Build the base posterior plus one posterior per base-augmented partition.

    By default the augmented posteriors reuse ``params`` unchanged; with
    ``refit=True`` each augmented dataset gets its own marginal-likelihood
    refit starting from ``params``.
    """
    if parts.n_experts < 2:
        raise ValueError("augmentation needs at least 2 partitions")
    if not 0 <= base_id < parts.n_experts:
        raise ValueError(f"base_id {base_id} out of range for {parts.n_experts} experts")
    base_idx = parts.indices_of(base_id)
    base_posterior = PosteriorGP.build(data.subset(base_idx), params)
    other_ids = np.array([i for i in range(parts.n_experts) if i != base_id], dtype=np.int64)
    posteriors = []
    for expert_id in other_ids:
        merged = np.sort(np.concatenate([base_idx, parts.indices_of(int(expert_id))]))
        sub = data.subset(merged)
        p = fit_hyperparams(sub, params, opt_cfg) if refit else params
        posteriors.append(PosteriorGP.build(sub, p))
    return AugmentedPosteriors(base_id, base_posterior, other_ids, posteriors, params)


def predict_augmented(built: AugmentedPosteriors, x_star, include_noise: bool = True) -> AugmentedPredictions:
    """Evaluate the base and augmented posteriors at the test inputs."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    params = built.params
    noise = params.noise_variance if include_noise else 0.0
    base_mean, base_var = gp_predict(built.base_posterior, x_star)
    base_var = base_var + noise
    n_t = x_star.shape[0]
    means = np.empty((n_t, built.expert_ids.size))
    variances = np.empty((n_t, built.expert_ids.size))
    for j, post in enumerate(built.posteriors):
        mean, var = gp_predict(post, x_star)
        means[:, j] = mean
        variances[:, j] = var + (post.params.noise_variance if include_noise else 0.0)
    prior = params.signal_variance + noise
    return AugmentedPredictions(
        built.base_id, base_mean, base_var, built.expert_ids, means, variances, prior, params
    )


def augmented_predictions(
    data: Dataset,
    parts: Partitioning,
    x_star,
    params: Hyperparams,
    base_id: int = 0,
    refit: bool = False,
    opt_cfg: OptimizerConfig | None = None,
    include_noise: bool = True,
) -> AugmentedPredictions:
    """Build and evaluate the base and augmented experts in one call."""
    built = augmented_posteriors(data, parts, params, base_id=base_id, refit=refit, opt_cfg=opt_cfg)
    return predict_augmented(built, x_star, include_noise=include_noise)


def grbcm_combine(aug: AugmentedPredictions, columns=None, method: str = "grbcm"):
    """Fuse (a subset of) augmented experts against the base expert.

    ``columns`` selects augmented-expert columns (default: all). The
    lowest-id selected expert carries beta = 1; the others carry the
    clamped entropy gap relative to the base.
    """
    cols = np.arange(aug.expert_ids.size) if columns is None else np.asarray(columns)
    means = aug.means[:, cols]
    variances = aug.variances[:, cols]
    if not np.all(np.isfinite(variances)) or np.any(variances <= 0.0):
        raise ValueError("augmented expert variances must be finite and strictly positive")
    beta = 0.5 * (np.log(aug.base_var)[:, None] - np.log(variances))
    beta = np.clip(beta, 0.0, None)
    beta[:, 0] = 1.0  # columns arrive in ascending expert-id order
    bsum = beta.sum(axis=1)
    prec = np.sum(beta / variances, axis=1) + (1.0 - bsum) / aug.base_var
    mean_num = np.sum(beta * means / variances, axis=1) + (1.0 - bsum) * aug.base_mean / aug.base_var
    return _finalize(method, prec, mean_num, aug.prior_variance, beta)


def grbcm(
    data: Dataset,
    parts: Partitioning,
    x_star,
    params: Hyperparams | None = None,
    base_id: int = 0,
    opt_cfg: OptimizerConfig | None = None,
    refit: bool = False,
    augmented: AugmentedPredictions | None = None,
) -> AggregateResult:
    """Generalized robust BCM over all partitions.

    ``params`` (the shared hyperparameters) are fit on the factorized
    objective when not supplied. ``augmented`` short-circuits the
    augmented-expert construction when the caller already has it.
    """
    if parts.n_experts < 2:
        raise ValueError("grbcm needs at least 2 experts")
    if augmented is None:
        if params is None:
            params = shared_hyperparams(data, parts, opt_cfg)
        augmented = augmented_predictions(
            data, parts, x_star, params, base_id=base_id, refit=refit, opt_cfg=opt_cfg
        )
    result = grbcm_combine(augmented)
    # expose per-expert weights in expert-id order, base column holds 1-sum
    n_t = result.means.shape[0]
    weights = np.zeros((n_t, parts.n_experts))
    beta = result.weights_used
    weights[:, augmented.expert_ids] = beta
    weights[:, augmented.base_id] = 1.0 - beta.sum(axis=1)
    return AggregateResult(result.means, result.variances, "grbcm", weights, result.fallback_mask)
