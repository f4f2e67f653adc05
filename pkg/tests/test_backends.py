"""The numba kernels and the numpy fallbacks must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from dgpkit import backends

pytestmark = pytest.mark.skipif(not backends.HAVE_NUMBA, reason="numba not installed")

rng = np.random.default_rng(7)


def test_se_ard_paths_agree():
    x1 = rng.normal(size=(40, 3))
    x2 = rng.normal(size=(25, 3))
    inv_ls = 1.0 / np.array([0.5, 1.5, 2.0])
    a = backends._se_ard_nb(x1, x2, 1.7, inv_ls)
    b = backends._se_ard_np(x1, x2, 1.7, inv_ls)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_se_ard_sym_paths_agree_and_symmetric():
    x = rng.normal(size=(30, 2))
    inv_ls = 1.0 / np.array([0.8, 1.2])
    a = backends._se_ard_sym_nb(x, 2.0, inv_ls)
    b = backends._se_ard_sym_np(x, 2.0, inv_ls)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    assert np.array_equal(a, a.T)
    assert np.array_equal(b, b.T)


def test_weighted_sqdist_sums_paths_agree():
    x = rng.normal(size=(35, 4))
    w = rng.normal(size=(35, 35))
    w = w + w.T  # callers always pass a symmetric weight matrix
    a = backends._weighted_sqdist_sums_nb(x, w)
    b = backends._weighted_sqdist_sums_np(x, w)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


def test_lasso_cd_paths_agree():
    for seed in range(5):
        r = np.random.default_rng(seed)
        a = r.normal(size=(8, 16))
        gram = a @ a.T / 16 + 0.1 * np.eye(8)
        target = r.normal(size=8)
        warm = r.normal(scale=0.1, size=8)
        nb = backends._lasso_cd_nb(gram, target.copy(), 0.1, 1e-12, 1000, np.zeros(8))
        py = backends._lasso_cd_py(gram, target.copy(), 0.1, 1e-12, 1000)
        np.testing.assert_allclose(nb, py, rtol=0, atol=1e-10)
        nb_warm = backends._lasso_cd_nb(gram, target.copy(), 0.1, 1e-12, 1000, warm.copy())
        py_warm = backends._lasso_cd_py(gram, target.copy(), 0.1, 1e-12, 1000, warm)
        np.testing.assert_allclose(nb_warm, py_warm, rtol=0, atol=1e-10)
        np.testing.assert_allclose(nb_warm, nb, rtol=0, atol=1e-8)


def test_lasso_cd_solves_kkt():
    r = np.random.default_rng(3)
    a = r.normal(size=(6, 20))
    gram = a @ a.T / 20 + 0.2 * np.eye(6)
    target = r.normal(size=6)
    lam = 0.15
    beta = backends.lasso_cd(gram, target, lam, tol=1e-14, max_iter=5000)
    grad = gram @ beta - target
    active = np.abs(beta) > 0
    np.testing.assert_allclose(grad[active], -lam * np.sign(beta[active]), atol=1e-8)
    assert np.all(np.abs(grad[~active]) <= lam + 1e-8)


def test_lloyd_paths_agree_on_labels():
    x = rng.normal(size=(50, 3))
    centers = x[:4].copy()
    la, ia = backends._lloyd_nb(x, centers.copy(), 100)
    lb, ib = backends._lloyd_py(x, centers.copy(), 100)
    assert np.array_equal(la, lb)
    assert abs(ia - ib) <= 1e-8 * max(1.0, abs(ib))


def test_kmeans_deterministic_and_nonempty():
    x = rng.normal(size=(30, 2))
    l1 = backends.kmeans(x, 5, seed=11)
    l2 = backends.kmeans(x, 5, seed=11)
    assert np.array_equal(l1, l2)
    assert np.unique(l1).size == 5


def test_kmeans_repairs_duplicate_points():
    # 6 identical points, 3 clusters: only repair can fill all clusters
    x = np.ones((6, 2))
    labels = backends.kmeans(x, 3, seed=0, restarts=3)
    assert np.unique(labels).size == 3


def test_env_flag_disables_numba():
    code = (
        "import dgpkit.backends as b; "
        "print(b.NUMBA_ENABLED)"
    )
    env = dict(os.environ, DGPKIT_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True
    )
    assert out.stdout.strip() == "False"
