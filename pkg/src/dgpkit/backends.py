"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

The numba path is active when numba imports cleanly and the environment
variable ``DGPKIT_DISABLE_NUMBA`` is not set to ``1``/``true``/``yes``.
Both paths compute the same quantities (up to floating-point summation
order); ``tests/test_backends.py`` checks them against each other and
``benchmarks/backend_bench.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.spatial.distance import cdist


def _env_disabled() -> bool:
    return os.environ.get("DGPKIT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - only on minimal installs
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and not _env_disabled()


# ---------------------------------------------------------------------------
# SE-ARD covariance
#
# k(x, x') = sf2 * exp(-0.5 * sum_d (x_d - x'_d)^2 / L_d)
# where L_d is the ARD parameter for dimension d (it divides the squared
# distance directly, i.e. it acts as a squared length-scale).
# ---------------------------------------------------------------------------


def _se_ard_np(x1, x2, sf2, inv_ls):
    scale = np.sqrt(inv_ls)
    d2 = cdist(x1 * scale, x2 * scale, "sqeuclidean")
    return sf2 * np.exp(-0.5 * d2)


def _se_ard_sym_np(x, sf2, inv_ls):
    k = _se_ard_np(x, x, sf2, inv_ls)
    # exact sf2 on the diagonal (cdist leaves ~1e-17 residuals there)
    np.fill_diagonal(k, sf2)
    return k


if HAVE_NUMBA:

    @njit(cache=True)
    def _se_ard_nb(x1, x2, sf2, inv_ls):
        n1, d = x1.shape
        n2 = x2.shape[0]
        out = np.empty((n1, n2))
        for i in range(n1):
            for j in range(n2):
                acc = 0.0
                for k in range(d):
                    diff = x1[i, k] - x2[j, k]
                    acc += diff * diff * inv_ls[k]
                out[i, j] = sf2 * np.exp(-0.5 * acc)
        return out

    @njit(cache=True)
    def _se_ard_sym_nb(x, sf2, inv_ls):
        n, d = x.shape
        out = np.empty((n, n))
        for i in range(n):
            out[i, i] = sf2
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    acc += diff * diff * inv_ls[k]
                v = sf2 * np.exp(-0.5 * acc)
                out[i, j] = v
                out[j, i] = v
        return out


def se_ard(x1, x2, sf2, length_scales):
    """Cross-covariance matrix between two input sets."""
    x1 = np.ascontiguousarray(x1, dtype=np.float64)
    x2 = np.ascontiguousarray(x2, dtype=np.float64)
    inv_ls = 1.0 / np.asarray(length_scales, dtype=np.float64)
    if NUMBA_ENABLED:
        return _se_ard_nb(x1, x2, float(sf2), inv_ls)
    return _se_ard_np(x1, x2, float(sf2), inv_ls)


def se_ard_sym(x, sf2, length_scales):
    """Covariance matrix of one input set with itself (exactly symmetric)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    inv_ls = 1.0 / np.asarray(length_scales, dtype=np.float64)
    if NUMBA_ENABLED:
        return _se_ard_sym_nb(x, float(sf2), inv_ls)
    return _se_ard_sym_np(x, float(sf2), inv_ls)


# ---------------------------------------------------------------------------
# Per-dimension weighted squared-distance sums, used by the marginal
# likelihood gradient: out[d] = sum_ij w[i,j] * (x[i,d] - x[j,d])^2
# with w symmetric (the i == j terms vanish).
# ---------------------------------------------------------------------------


def _weighted_sqdist_sums_np(x, w):
    n, d = x.shape
    out = np.empty(d)
    for k in range(d):
        diff = x[:, k, None] - x[None, :, k]
        out[k] = np.sum(w * diff * diff)
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _weighted_sqdist_sums_nb(x, w):
        n, d = x.shape
        out = np.zeros(d)
        for i in range(n):
            for j in range(i + 1, n):
                wij = w[i, j]
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    out[k] += wij * diff * diff
        for k in range(d):
            out[k] *= 2.0
        return out


def weighted_sqdist_sums(x, w):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if NUMBA_ENABLED:
        return _weighted_sqdist_sums_nb(x, w)
    return _weighted_sqdist_sums_np(x, w)


# ---------------------------------------------------------------------------
# Lasso via cyclic coordinate descent on the gram formulation:
#     minimize 0.5 * b' G b - t' b + lam * |b|_1
# Cold start (b = 0), which yields exact zeros in one pass whenever
# lam >= max|t|.
# ---------------------------------------------------------------------------


def _lasso_cd_py(gram, target, lam, tol, max_iter, beta0=None):
    p = target.shape[0]
    if beta0 is None:
        beta = np.zeros(p)
        resid = target.copy()  # target - gram @ beta
    else:
        beta = beta0.copy()
        resid = target - gram @ beta
    for _ in range(max_iter):
        delta = 0.0
        for k in range(p):
            old = beta[k]
            z = resid[k] + gram[k, k] * old
            if z > lam:
                new = (z - lam) / gram[k, k]
            elif z < -lam:
                new = (z + lam) / gram[k, k]
            else:
                new = 0.0
            step = new - old
            if step != 0.0:
                resid -= gram[:, k] * step
                beta[k] = new
                if abs(step) > delta:
                    delta = abs(step)
        if delta <= tol:
            break
    return beta


if HAVE_NUMBA:

    @njit(cache=True)
    def _lasso_cd_nb(gram, target, lam, tol, max_iter, beta):
        p = target.shape[0]
        resid = target - gram @ beta
        for _ in range(max_iter):
            delta = 0.0
            for k in range(p):
                old = beta[k]
                z = resid[k] + gram[k, k] * old
                if z > lam:
                    new = (z - lam) / gram[k, k]
                elif z < -lam:
                    new = (z + lam) / gram[k, k]
                else:
                    new = 0.0
                step = new - old
                if step != 0.0:
                    for l in range(p):
                        resid[l] -= gram[l, k] * step
                    beta[k] = new
                    if abs(step) > delta:
                        delta = abs(step)
            if delta <= tol:
                break
        return beta


def lasso_cd(gram, target, lam, tol=1e-12, max_iter=1000, beta0=None):
    """Cold start by default; ``beta0`` warm-starts the descent (the solution
    is unique, so the start only affects iteration count)."""
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    if NUMBA_ENABLED:
        start = np.zeros(target.shape[0]) if beta0 is None else np.asarray(beta0, dtype=np.float64).copy()
        return _lasso_cd_nb(gram, target, float(lam), float(tol), int(max_iter), start)
    return _lasso_cd_py(gram, target, float(lam), float(tol), int(max_iter), beta0)


# ---------------------------------------------------------------------------
# Lloyd k-means iterations (seeded ++ initialization happens in numpy,
# outside the jitted loop). Empty clusters keep their stale center; the
# caller decides how to repair them.
# ---------------------------------------------------------------------------


def _lloyd_py(x, centers, max_iter):
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        moved = 0.0
        for c in range(centers.shape[0]):
            mask = labels == c
            if mask.any():
                new_centers[c] = x[mask].mean(axis=0)
                moved = max(moved, float(((new_centers[c] - centers[c]) ** 2).sum()))
        centers = new_centers
        if moved <= 1e-24:
            break
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    return labels.astype(np.int64), inertia


if HAVE_NUMBA:

    @njit(cache=True)
    def _lloyd_nb(x, centers, max_iter):
        n, d = x.shape
        k = centers.shape[0]
        labels = np.zeros(n, np.int64)
        counts = np.zeros(k, np.int64)
        sums = np.zeros((k, d))
        for _ in range(max_iter):
            for i in range(n):
                best = 0
                bestd = np.inf
                for c in range(k):
                    acc = 0.0
                    for j in range(d):
                        diff = x[i, j] - centers[c, j]
                        acc += diff * diff
                    if acc < bestd:
                        bestd = acc
                        best = c
                labels[i] = best
            counts[:] = 0
            sums[:] = 0.0
            for i in range(n):
                c = labels[i]
                counts[c] += 1
                for j in range(d):
                    sums[c, j] += x[i, j]
            moved = 0.0
            for c in range(k):
                if counts[c] > 0:
                    acc = 0.0
                    for j in range(d):
                        nc = sums[c, j] / counts[c]
                        diff = nc - centers[c, j]
                        acc += diff * diff
                        centers[c, j] = nc
                    if acc > moved:
                        moved = acc
            if moved <= 1e-24:
                break
        inertia = 0.0
        for i in range(n):
            best = 0
            bestd = np.inf
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    diff = x[i, j] - centers[c, j]
                    acc += diff * diff
                if acc < bestd:
                    bestd = acc
                    best = c
            labels[i] = best
            inertia += bestd
        return labels, inertia


def _lloyd(x, centers, max_iter):
    if NUMBA_ENABLED:
        return _lloyd_nb(x, centers, max_iter)
    return _lloyd_py(x, centers, max_iter)


def _plusplus_init(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = x[idx]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def kmeans(x, k, seed, restarts=20, max_iter=100, ensure_nonempty=True):
    """Seeded k-means: ++ init, Lloyd iterations, best inertia over restarts.

    If every restart leaves some cluster empty, the largest cluster's
    point farthest from its centroid is moved into an empty cluster until
    all k clusters are nonempty (deterministic, lowest index wins ties).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _plusplus_init(x, k, rng)
        labels, inertia = _lloyd(x, centers.copy(), max_iter)
        n_empty = k - np.unique(labels).size
        key = (n_empty, inertia)
        if best is None or key < best[0]:
            best = (key, labels)
    labels = best[1].copy()
    if ensure_nonempty:
        labels = _repair_empty(x, labels, k)
    return labels


def _repair_empty(x, labels, k):
    counts = np.bincount(labels, minlength=k)
    while (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        largest = int(np.argmax(counts))
        members = np.flatnonzero(labels == largest)
        centroid = x[members].mean(axis=0)
        far = members[int(np.argmax(((x[members] - centroid) ** 2).sum(axis=1)))]
        labels[far] = empty
        counts = np.bincount(labels, minlength=k)
    return labels


def warmup():
    """Trigger JIT compilation of all numba kernels (no-op on the numpy path)."""
    if not NUMBA_ENABLED:
        return
    x = np.linspace(0.0, 1.0, 4).reshape(-1, 2)
    se_ard(x, x, 1.0, np.ones(2))
    se_ard_sym(x, 1.0, np.ones(2))
    weighted_sqdist_sums(x, np.eye(2))
    lasso_cd(np.eye(2), np.ones(2), 0.1)
    kmeans(x, 2, seed=0, restarts=1, max_iter=5)
