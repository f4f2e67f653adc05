"""Dependency-aware expert aggregation (DGEA).

Experts whose predictions are conditionally dependent are grouped by a
penalized precision estimate plus spectral clustering; each group is
fused with GRBCM (the global base partition joins every group), and the
resulting group-level experts are combined with a generalized product of
experts (uniform weights) or one more GRBCM step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import (
    AggregateResult,
    AugmentedPredictions,
    _finalize,
    augmented_predictions,
    grbcm_combine,
)
from .dependency import ClusterAssignment, PrecisionEstimate, expert_precision, spectral_clustering
from .experts import ExpertPredictions, Partitioning, TrainedExpert, predict_experts, train_experts
from .gp import Dataset, Hyperparams, OptimizerConfig

OUTER_RULES = ("gpoe", "grbcm")


def default_cluster_count(n_experts: int) -> int:
    """Convenience default when no cluster count is supplied: max(2, M/4)."""
    return max(2, int(round(n_experts / 4)))


@dataclass(frozen=True)
class DgeaConfig:
    """Knobs of the clustering-and-fuse pipeline.

    ``clusters=None`` falls back to ``default_cluster_count``.
    ``probe_fraction`` clusters on a seeded subset of the test points
    instead of all of them (cheaper, but not the reference protocol).
    """

    lam: float = 0.1
    clusters: int | None = None
    outer: str = "gpoe"
    base_id: int = 0
    seed: int = 0
    standardize: bool = True
    refit_augmented: bool = False
    probe_fraction: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"penalty must be nonnegative, got {self.lam}")
        if self.outer not in OUTER_RULES:
            raise ValueError(f"outer rule must be one of {OUTER_RULES}, got {self.outer!r}")
        if self.clusters is not None and self.clusters < 1:
            raise ValueError("cluster count must be at least 1")
        if self.probe_fraction is not None and not 0.0 < self.probe_fraction <= 1.0:
            raise ValueError("probe fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ClusterExpert:
    """Fused predictive distribution of one cluster of experts."""

    cluster_id: int
    member_ids: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    fallback_mask: np.ndarray | None = None


@dataclass(frozen=True)
class DgeaDiagnostics:
    precision: PrecisionEstimate
    clusters: ClusterAssignment
    cluster_experts: list[ClusterExpert]


class DgeaStageError(RuntimeError):
    """Failure inside one named stage of the pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"dgea stage {stage!r} failed: {cause}")
        self.stage = stage


def _run_stage(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DgeaStageError:
        raise
    except Exception as exc:
        raise DgeaStageError(stage, exc) from exc


def _fuse_cluster(cluster_id, member_ids, aug: AugmentedPredictions) -> ClusterExpert:
    """GRBCM restricted to one cluster's members, base always included."""
    member_ids = np.sort(np.asarray(member_ids, dtype=np.int64))
    non_base = member_ids[member_ids != aug.base_id]
    if non_base.size == 0:
        # the base alone: the cluster-level expert is the base itself
        return ClusterExpert(cluster_id, member_ids, aug.base_mean.copy(), aug.base_var.copy())
    columns = np.searchsorted(aug.expert_ids, non_base)
    result = grbcm_combine(aug, columns=columns)
    return ClusterExpert(cluster_id, member_ids, result.means, result.variances, result.fallback_mask)


def cluster_fuse(
    data: Dataset,
    parts: Partitioning,
    member_ids,
    base_id: int,
    x_star,
    params: Hyperparams,
    refit: bool = False,
    opt_cfg: OptimizerConfig | None = None,
) -> ClusterExpert:
    """Standalone GRBCM fuse of one cluster (plus the global base)."""
    member_ids = np.asarray(member_ids, dtype=np.int64)
    if member_ids.size == 0:
        raise ValueError("cluster must contain at least one expert")
    aug = augmented_predictions(data, parts, x_star, params, base_id=base_id, refit=refit, opt_cfg=opt_cfg)
    return _fuse_cluster(0, member_ids, aug)


def _outer_gpoe(cluster_experts, prior_var):
    k = len(cluster_experts)
    means = np.column_stack([c.means for c in cluster_experts])
    variances = np.column_stack([c.variances for c in cluster_experts])
    beta = np.full_like(means, 1.0 / k)
    prec = np.sum(beta / variances, axis=1)
    mean_num = np.sum(beta * means / variances, axis=1)
    return _finalize("dgea", prec, mean_num, prior_var, beta)


def _outer_grbcm(cluster_experts, base_cluster, prior_var):
    others = [c for c in cluster_experts if c.cluster_id != base_cluster.cluster_id]
    means = np.column_stack([c.means for c in others])
    variances = np.column_stack([c.variances for c in others])
    beta = 0.5 * (np.log(base_cluster.variances)[:, None] - np.log(variances))
    beta = np.clip(beta, 0.0, None)
    beta[:, 0] = 1.0  # lowest-id non-base cluster anchors the fuse
    bsum = beta.sum(axis=1)
    prec = np.sum(beta / variances, axis=1) + (1.0 - bsum) / base_cluster.variances
    mean_num = np.sum(beta * means / variances, axis=1) + (1.0 - bsum) * base_cluster.means / base_cluster.variances
    return _finalize("dgea", prec, mean_num, prior_var, beta)


def dgea_pipeline(
    data: Dataset,
    parts: Partitioning,
    x_star,
    cfg: DgeaConfig,
    experts: list[TrainedExpert] | None = None,
    preds: ExpertPredictions | None = None,
    augmented: AugmentedPredictions | None = None,
    opt_cfg: OptimizerConfig | None = None,
):
    """Full pipeline returning the aggregate and stage diagnostics.

    ``experts``, ``preds`` and ``augmented`` can be supplied to reuse work
    the caller has already done (the benchmark trains experts once and
    evaluates every method on them).
    """
    if parts.n_experts < 2:
        raise ValueError("dgea needs at least 2 experts")
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))

    if experts is None and (preds is None or augmented is None):
        experts = _run_stage("train", train_experts, data, parts, opt_cfg)
    if preds is None:
        preds = _run_stage("predict_experts", predict_experts, experts, x_star)
    params = augmented.params if augmented is not None else experts[0].hyperparams

    means_for_clustering = preds.means
    if cfg.probe_fraction is not None:
        n_probe = max(2, int(np.ceil(cfg.probe_fraction * preds.means.shape[0])))
        sel = np.random.default_rng(cfg.seed).permutation(preds.means.shape[0])[:n_probe]
        means_for_clustering = preds.means[np.sort(sel)]

    estimate = _run_stage(
        "graphical_lasso", expert_precision, means_for_clustering, cfg.lam, standardize=cfg.standardize
    )
    n_clusters = cfg.clusters if cfg.clusters is not None else default_cluster_count(parts.n_experts)
    assignment = _run_stage("spectral_clustering", spectral_clustering, estimate.omega, n_clusters, cfg.seed)

    if augmented is None:
        augmented = _run_stage(
            "augment",
            augmented_predictions,
            data,
            parts,
            x_star,
            params,
            base_id=cfg.base_id,
            refit=cfg.refit_augmented,
            opt_cfg=opt_cfg,
        )

    cluster_experts = [
        _run_stage("cluster_fuse", _fuse_cluster, cid, assignment.members(cid), augmented)
        for cid in range(assignment.n_clusters)
    ]

    prior_var = augmented.prior_variance
    if cfg.outer == "gpoe" or assignment.n_clusters == 1:
        result = _run_stage("aggregate", _outer_gpoe, cluster_experts, prior_var)
    else:
        base_cluster = cluster_experts[int(assignment.labels[cfg.base_id])]
        result = _run_stage("aggregate", _outer_grbcm, cluster_experts, base_cluster, prior_var)

    inner_masks = [c.fallback_mask for c in cluster_experts if c.fallback_mask is not None]
    mask = result.fallback_mask
    if inner_masks:
        combined = np.logical_or.reduce(inner_masks)
        mask = combined if mask is None else (mask | combined)
    result = AggregateResult(result.means, result.variances, "dgea", result.weights_used, mask)
    return result, DgeaDiagnostics(estimate, assignment, cluster_experts)


def dgea_predict(
    data: Dataset,
    parts: Partitioning,
    x_star,
    cfg: DgeaConfig,
    experts: list[TrainedExpert] | None = None,
    preds: ExpertPredictions | None = None,
    augmented: AugmentedPredictions | None = None,
    opt_cfg: OptimizerConfig | None = None,
) -> AggregateResult:
    """Aggregate predictive mean/variance of the clustered-expert model."""
    result, _ = dgea_pipeline(
        data, parts, x_star, cfg, experts=experts, preds=preds, augmented=augmented, opt_cfg=opt_cfg
    )
    return result
