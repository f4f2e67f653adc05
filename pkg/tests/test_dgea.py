"""Clustered-expert aggregation pipeline."""

import numpy as np
import pytest

import dgpkit as dk
from dgpkit.aggregation import augmented_predictions, grbcm_combine
from dgpkit.bench import full_gp_oracle
from dgpkit.dgea import DgeaStageError, default_cluster_count
from dgpkit.gp import Dataset, Hyperparams, normalize, transform_with


@pytest.fixture(scope="module")
def trained_five():
    train, test = dk.gen_toy(500, 80, seed=7)
    parts = dk.partition(train, 5, "random", 3)
    experts = dk.train_experts(train, parts, dk.OptimizerConfig(max_iter=40))
    preds = dk.predict_experts(experts, test.inputs)
    aug = augmented_predictions(train, parts, test.inputs, experts[0].hyperparams)
    return train, test, parts, experts, preds, aug


class TestReductions:
    def test_single_cluster_reduces_to_grbcm(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        cfg = dk.DgeaConfig(clusters=1, seed=0)
        result, diag = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
        reference = grbcm_combine(aug)
        np.testing.assert_allclose(result.means, reference.means, rtol=1e-12)
        np.testing.assert_allclose(result.variances, reference.variances, rtol=1e-12)
        assert diag.clusters.n_clusters == 1

    def test_two_experts_single_cluster_equals_full_gp(self):
        train, test = dk.gen_toy(400, 50, seed=5)
        parts = dk.partition(train, 2, "random", 1)
        experts = dk.train_experts(train, parts, dk.OptimizerConfig(max_iter=30))
        cfg = dk.DgeaConfig(clusters=1, seed=0)
        result = dk.dgea_predict(train, parts, test.inputs, cfg, experts=experts)
        mean, var = full_gp_oracle(train, experts[0].hyperparams, test.inputs)
        np.testing.assert_allclose(result.means, mean, atol=1e-8)
        np.testing.assert_allclose(result.variances, var, atol=1e-8)


class TestClusterFuse:
    def test_full_cluster_equals_plain_grbcm(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        params = experts[0].hyperparams
        ce = dk.cluster_fuse(train, parts, [0, 1, 2, 3, 4], 0, test.inputs, params)
        reference = grbcm_combine(aug)
        np.testing.assert_allclose(ce.means, reference.means, rtol=1e-12)
        np.testing.assert_allclose(ce.variances, reference.variances, rtol=1e-12)

    def test_singleton_cluster_is_augmented_expert(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        params = experts[0].hyperparams
        ce = dk.cluster_fuse(train, parts, [2], 0, test.inputs, params)
        col = int(np.searchsorted(aug.expert_ids, 2))
        np.testing.assert_allclose(ce.means, aug.means[:, col], rtol=1e-12)
        np.testing.assert_allclose(ce.variances, aug.variances[:, col], rtol=1e-12)

    def test_singleton_base_cluster_is_base_prediction(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        params = experts[0].hyperparams
        ce = dk.cluster_fuse(train, parts, [0], 0, test.inputs, params)
        np.testing.assert_allclose(ce.means, aug.base_mean, rtol=1e-12)
        np.testing.assert_allclose(ce.variances, aug.base_var, rtol=1e-12)

    def test_member_order_does_not_matter(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        params = experts[0].hyperparams
        a = dk.cluster_fuse(train, parts, [1, 3, 4], 0, test.inputs, params)
        b = dk.cluster_fuse(train, parts, [4, 1, 3], 0, test.inputs, params)
        np.testing.assert_allclose(a.means, b.means, atol=1e-10)
        np.testing.assert_allclose(a.variances, b.variances, atol=1e-10)

    def test_empty_cluster_rejected(self, trained_five):
        train, test, parts, experts, _, _ = trained_five
        with pytest.raises(ValueError, match="at least one"):
            dk.cluster_fuse(train, parts, [], 0, test.inputs, experts[0].hyperparams)


class TestPipeline:
    def test_bit_identical_reruns(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        cfg = dk.DgeaConfig(clusters=2, seed=11)
        a, _ = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
        b, _ = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.variances, b.variances)

    def test_cluster_experts_partition_the_expert_set(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        cfg = dk.DgeaConfig(clusters=3, seed=0)
        _, diag = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
        assert len(diag.cluster_experts) == 3
        members = np.concatenate([ce.member_ids for ce in diag.cluster_experts])
        assert np.array_equal(np.sort(members), np.arange(parts.n_experts))

    def test_default_cluster_count_heuristic(self):
        assert default_cluster_count(10) == 2
        assert default_cluster_count(20) == 5
        assert default_cluster_count(50) == 12

    def test_outer_grbcm_mode_runs(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        cfg = dk.DgeaConfig(clusters=3, seed=0, outer="grbcm")
        result, _ = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
        assert np.all(np.isfinite(result.means))
        assert np.all(result.variances > 0.0)

    def test_probe_fraction_clusters_on_subset(self, trained_five):
        train, test, parts, experts, preds, aug = trained_five
        cfg = dk.DgeaConfig(clusters=2, seed=0, probe_fraction=0.5)
        result, diag = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
        assert diag.clusters.n_clusters == 2
        assert result.means.shape == (test.n,)

    def test_stage_errors_name_the_stage(self, trained_five, monkeypatch):
        train, test, parts, experts, preds, aug = trained_five
        cfg = dk.DgeaConfig(clusters=2, seed=0)

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr("dgpkit.dgea.expert_precision", boom)
        with pytest.raises(DgeaStageError, match="graphical_lasso"):
            dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)

    def test_needs_at_least_two_experts(self):
        train, test = dk.gen_toy(60, 10, seed=0)
        parts = dk.partition(train, 1, "random", 0)
        with pytest.raises(ValueError, match="2 experts"):
            dk.dgea_predict(train, parts, test.inputs, dk.DgeaConfig(clusters=1))


class TestStatisticalBehaviour:
    def test_agrees_with_full_gp_within_three_sigma(self):
        # n=500, M=5, P=2: the clustered aggregate should rarely stray
        # more than 3 posterior standard deviations from the exact GP
        train, test = dk.gen_toy(500, 100, seed=13)
        parts = dk.partition(train, 5, "random", 2)
        experts = dk.train_experts(train, parts, dk.OptimizerConfig(max_iter=40))
        cfg = dk.DgeaConfig(clusters=2, seed=0)
        result = dk.dgea_predict(train, parts, test.inputs, cfg, experts=experts)
        mean, var = full_gp_oracle(train, experts[0].hyperparams, test.inputs)
        z = np.abs(result.means - mean) / np.sqrt(var)
        assert np.mean(z <= 3.0) >= 0.95

    @pytest.mark.slow
    def test_error_non_increasing_with_more_data(self):
        # fixed 100 points/expert; median error over 5 partition seeds
        # must not grow as the training set grows
        from dgpkit.aggregation import augmented_posteriors, predict_augmented

        medians = []
        for n in (500, 2000, 8000):
            m = n // 100
            train, test = dk.gen_toy(n, max(100, n // 10), seed=21)
            errs = []
            for seed in range(5):
                parts = dk.partition(train, m, "random", seed)
                experts = dk.train_experts(train, parts, dk.OptimizerConfig(max_iter=50, grad_tol=1e-5))
                preds = dk.predict_experts(experts, test.inputs)
                built = augmented_posteriors(train, parts, experts[0].hyperparams, base_id=0)
                aug = predict_augmented(built, test.inputs)
                cfg = dk.DgeaConfig(clusters=default_cluster_count(m), seed=seed)
                result, _ = dk.dgea_pipeline(train, parts, test.inputs, cfg, preds=preds, augmented=aug)
                errs.append(dk.smse(result.means, test.targets))
            medians.append(float(np.median(errs)))
        assert medians[1] <= medians[0] * 1.0000001
        assert medians[2] <= medians[1] * 1.0000001
