"""Covariance estimation, penalized precision, Laplacian, clustering."""

import numpy as np
import pytest

import dgpkit as dk
from dgpkit.dependency import _offdiag_l1
from dgpkit.gp import NumericalError

from conftest import random_spd


def glasso_objective(s, omega, lam):
    sign, logdet = np.linalg.slogdet(omega)
    assert sign > 0
    return logdet - float(np.sum(s * omega)) - lam * _offdiag_l1(omega)


class TestSampleCovariance:
    def test_hand_computed_case(self):
        means = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        s = dk.sample_covariance(means)
        np.testing.assert_allclose(s, [[1.0, 2.0], [2.0, 4.0]], rtol=0, atol=1e-14)

    def test_duplicate_columns_are_perfectly_correlated(self):
        col = np.random.default_rng(0).normal(size=8)
        s = dk.sample_covariance(np.column_stack([col, col]))
        assert s[0, 0] == pytest.approx(s[0, 1])
        assert s[0, 0] == pytest.approx(s[1, 1])

    def test_constant_column_gives_zero_row(self):
        means = np.column_stack([np.ones(6), np.random.default_rng(1).normal(size=6)])
        s = dk.sample_covariance(means)
        np.testing.assert_allclose(s[0], 0.0, atol=1e-15)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError, match="2 rows"):
            dk.sample_covariance(np.ones((1, 3)))


class TestGraphicalLasso:
    def test_diagonal_matrix_is_inverted_exactly(self):
        s = np.diag([2.0, 0.5, 1.25])
        for lam in (0.0, 0.1, 10.0):
            est = dk.graphical_lasso(s, lam)
            np.testing.assert_array_equal(est.omega, np.diag([0.5, 2.0, 0.8]))
            assert est.converged

    def test_unpenalized_recovers_matrix_inverse(self):
        for seed in range(5):
            s = random_spd(5, seed)
            est = dk.graphical_lasso(s, 0.0, tol=1e-10)
            inv = np.linalg.inv(s)
            assert np.linalg.norm(est.omega - inv) / np.linalg.norm(inv) <= 1e-6

    def test_large_penalty_kills_every_edge(self):
        for seed in range(5):
            s = random_spd(4, seed)
            lam = float(np.abs(s - np.diag(np.diag(s))).max())
            est = dk.graphical_lasso(s, lam * 1.000001)
            off = est.omega - np.diag(np.diag(est.omega))
            assert np.all(off == 0.0)
            np.testing.assert_array_equal(np.diag(est.omega), 1.0 / np.diag(s))
            # KKT: |(inv(omega) - s)_ij| = |s_ij| <= lam on the off-diagonal
            resid = np.abs(np.linalg.inv(est.omega) - s)
            np.fill_diagonal(resid, 0.0)
            assert resid.max() <= lam * 1.000001 + 1e-9

    @pytest.mark.parametrize("lam", [0.01, 0.1, 0.5])
    def test_kkt_residual_within_penalty(self, lam):
        for seed in range(5):
            s = random_spd(5, seed)
            est = dk.graphical_lasso(s, lam, tol=1e-10)
            assert est.converged
            resid = np.abs(np.linalg.inv(est.omega) - s)
            np.fill_diagonal(resid, 0.0)
            assert resid.max() <= lam + 1e-6

    def test_objective_trace_monotone_and_primal_improves(self):
        for seed in range(10):
            s = random_spd(8, seed)
            est = dk.graphical_lasso(s, 0.05, tol=1e-8)
            trace = np.array(est.objective_trace)
            scale = max(1.0, float(np.abs(trace).max()))
            assert np.all(np.diff(trace) >= -1e-10 * scale)
            # the penalized likelihood at the solution beats the starting guess
            start = np.diag(1.0 / np.diag(s))
            assert glasso_objective(s, est.omega, 0.05) >= glasso_objective(s, start, 0.05)

    def test_estimate_is_symmetric_positive_definite(self):
        for seed in range(5):
            est = dk.graphical_lasso(random_spd(6, seed), 0.08)
            assert np.max(np.abs(est.omega - est.omega.T)) <= 1e-10
            np.linalg.cholesky(est.omega)  # raises if not PD

    def test_max_iter_reached_reports_not_converged(self):
        s = random_spd(8, 3, ridge=0.01)
        est = dk.graphical_lasso(s, 0.001, tol=1e-14, max_iter=1)
        assert not est.converged
        assert est.iterations == 1

    def test_dual_gap_small_at_convergence(self):
        s = random_spd(5, 7)
        est = dk.graphical_lasso(s, 0.1, tol=1e-10)
        assert abs(est.dual_gap) <= 1e-6

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            dk.graphical_lasso(np.eye(2), -0.1)
        with pytest.raises(ValueError, match="symmetric"):
            dk.graphical_lasso(np.array([[1.0, 0.9], [0.1, 1.0]]), 0.1)
        singular = np.ones((2, 2))
        with pytest.raises((ValueError, NumericalError), match="singular|positive"):
            dk.graphical_lasso(singular, 0.0)

    def test_sparsity_monotone_in_penalty(self):
        good = 0
        for seed in range(100):
            s = random_spd(6, seed)
            e1 = dk.graphical_lasso(s, 0.05)
            e2 = dk.graphical_lasso(s, 0.2)
            edges1 = np.abs(e1.omega) > 1e-10
            edges2 = np.abs(e2.omega) > 1e-10
            np.fill_diagonal(edges1, False)
            np.fill_diagonal(edges2, False)
            if np.all(edges1 | ~edges2):
                good += 1
        assert good >= 95

    def test_standardized_pipeline_is_scale_free(self):
        rng = np.random.default_rng(11)
        base = rng.normal(size=(40, 4))
        scaled = base * np.array([1.0, 10.0, 0.1, 100.0])
        e1 = dk.expert_precision(base, 0.1)
        e2 = dk.expert_precision(scaled, 0.1)
        edges1 = np.abs(e1.omega) > 1e-12
        edges2 = np.abs(e2.omega) > 1e-12
        assert np.array_equal(edges1, edges2)


class TestLaplacian:
    def test_diagonal_precision_gives_zero_laplacian(self):
        lap = dk.build_laplacian(np.diag([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(lap, np.zeros((3, 3)))

    def test_hand_computed_two_node_case(self):
        lap = dk.build_laplacian(np.array([[1.0, -0.3], [-0.3, 1.0]]))
        np.testing.assert_allclose(lap, [[0.3, -0.3], [-0.3, 0.3]], atol=1e-15)

    def test_rows_sum_to_zero_and_psd(self):
        for seed in range(5):
            omega = random_spd(7, seed)
            lap = dk.build_laplacian(omega)
            np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)
            assert np.linalg.eigvalsh(lap).min() >= -1e-8


class TestSpectralClustering:
    @staticmethod
    def block_precision():
        omega = np.eye(10) * 2.0
        for block in ([0, 1, 2, 3], [4, 5, 6], [7, 8, 9]):
            for i in block:
                for j in block:
                    if i != j:
                        omega[i, j] = -0.5
        return omega

    def test_recovers_disconnected_blocks(self):
        omega = self.block_precision()
        expected = np.array([0] * 4 + [1] * 3 + [2] * 3)
        for seed in range(10):
            ca = dk.spectral_clustering(omega, 3, seed=seed)
            assert np.array_equal(ca.labels, expected)

    def test_degenerate_cluster_counts(self):
        omega = random_spd(6, 2)
        assert np.array_equal(dk.spectral_clustering(omega, 6, 0).labels, np.arange(6))
        assert np.array_equal(dk.spectral_clustering(omega, 1, 0).labels, np.zeros(6, dtype=int))

    def test_deterministic_given_seed(self):
        omega = random_spd(9, 4)
        a = dk.spectral_clustering(omega, 3, seed=5)
        b = dk.spectral_clustering(omega, 3, seed=5)
        assert np.array_equal(a.labels, b.labels)

    def test_every_cluster_nonempty(self):
        omega = random_spd(8, 6)
        for p in (2, 3, 4, 7):
            ca = dk.spectral_clustering(omega, p, seed=1)
            assert np.unique(ca.labels).size == p

    def test_bad_cluster_count_rejected(self):
        with pytest.raises(ValueError, match="n_clusters"):
            dk.spectral_clustering(np.eye(4), 5, 0)
        with pytest.raises(ValueError, match="n_clusters"):
            dk.spectral_clustering(np.eye(4), 0, 0)


class TestSerialization:
    def test_matrix_round_trip(self, tmp_path):
        omega = random_spd(5, 0)
        path = tmp_path / "omega.txt"
        dk.dependency.save_matrix(path, omega)
        loaded = np.loadtxt(path)
        np.testing.assert_allclose(loaded, omega, rtol=0, atol=0)

    def test_labels_written_as_single_row(self, tmp_path):
        path = tmp_path / "labels.txt"
        dk.dependency.save_matrix(path, np.array([0, 1, 1, 2]), fmt="%d")
        assert path.read_text().strip() == "0 1 1 2"
