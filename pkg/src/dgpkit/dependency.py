"""Conditional-dependency detection between experts.

Pipeline: sample covariance of the experts' predictive means, an
L1-penalized precision estimate

    maximize  log|Omega| - trace(S Omega) - lam * ||Omega||_1(off-diagonal)

solved by block coordinate descent (one row/column at a time, the inner
lasso by cyclic coordinate descent), and spectral clustering of the
resulting precision matrix into groups of mutually dependent experts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import backends
from .gp import NumericalError


@dataclass(frozen=True)
class PrecisionEstimate:
    """Estimated precision matrix and solver diagnostics.

    ``dual_gap`` is the optimality residual trace(S*Omega) - M +
    lam * ||Omega||_1(off-diag), zero at the exact solution.
    ``objective_trace`` holds the working-covariance log-determinant per
    sweep, which the block coordinate updates increase monotonically.
    """

    omega: np.ndarray
    lam: float
    converged: bool
    iterations: int
    dual_gap: float
    objective_trace: tuple = ()


class _PDViolation(Exception):
    pass


def sample_covariance(means) -> np.ndarray:
    """Unbiased sample covariance of the columns of an (n_t, M) matrix."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2:
        raise ValueError("expected a 2-d matrix of per-expert predictions")
    n_t = means.shape[0]
    if n_t < 2:
        raise ValueError(f"need at least 2 rows to estimate a covariance, got {n_t}")
    centered = means - means.mean(axis=0)
    return centered.T @ centered / (n_t - 1)


def _check_square_symmetric(s):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    scale = max(float(np.max(np.abs(s))), 1e-300)
    if np.max(np.abs(s - s.T)) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (s + s.T)


def _offdiag_l1(a):
    return float(np.abs(a).sum() - np.abs(np.diag(a)).sum())


def graphical_lasso(
    s,
    lam,
    tol: float = 1e-4,
    max_iter: int = 100,
    inner_tol: float = 1e-12,
    inner_max_iter: int = 1000,
) -> PrecisionEstimate:
    """L1-penalized precision estimate of a covariance matrix.

    The penalty applies to off-diagonal entries only. Convergence is
    declared when the mean absolute change of the working covariance over
    one full sweep drops to tol * mean|off-diagonal of s|. If a sweep
    produces a non-positive-definite pivot, the solve restarts once with
    lam pre-loaded on the diagonal (the classic safeguarded start, which
    keeps all iterates positive definite for lam > 0).
    """
    s = _check_square_symmetric(s)
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    m = s.shape[0]
    if np.any(np.diag(s) <= 0.0):
        if lam == 0.0:
            raise ValueError("covariance with a non-positive diagonal is singular and lam=0")
        raise ValueError("covariance diagonal must be strictly positive")
    if m == 1:
        return PrecisionEstimate(np.array([[1.0 / s[0, 0]]]), float(lam), True, 0, 0.0, ())
    if lam == 0.0:
        # unpenalized: still verify s is invertible before sweeping
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is singular, the unpenalized problem has no solution")

    try:
        return _glasso_sweeps(s, s.copy(), lam, tol, max_iter, inner_tol, inner_max_iter)
    except _PDViolation:
        preloaded = s + lam * np.eye(m)
        try:
            return _glasso_sweeps(s, preloaded, lam, tol, max_iter, inner_tol, inner_max_iter)
        except _PDViolation as exc:
            raise NumericalError(f"graphical lasso lost positive definiteness: {exc}") from exc


def _glasso_sweeps(s, w, lam, tol, max_iter, inner_tol, inner_max_iter):
    m = s.shape[0]
    offdiag_scale = _offdiag_l1(s) / (m * (m - 1))
    threshold = tol * offdiag_scale
    betas = np.zeros((m, m - 1))
    denoms = np.full(m, np.nan)
    trace = []
    converged = False
    sweeps = 0
    masks = [np.array([i for i in range(m) if i != j]) for j in range(m)]
    for sweep in range(max_iter):
        change = 0.0
        for j in range(m):
            mask = masks[j]
            w11 = np.ascontiguousarray(w[np.ix_(mask, mask)])
            s12 = s[mask, j]
            # warm start from the previous sweep (zeros on the first sweep)
            beta = backends.lasso_cd(
                w11, s12, lam, tol=inner_tol, max_iter=inner_max_iter, beta0=betas[j]
            )
            w12 = w11 @ beta
            change += float(np.abs(w[mask, j] - w12).sum())
            w[mask, j] = w12
            w[j, mask] = w12
            denom = w[j, j] - float(w12 @ beta)
            if not np.isfinite(denom) or denom <= 0.0:
                raise _PDViolation(f"non-positive pivot at column {j} (sweep {sweep})")
            betas[j] = beta
            denoms[j] = denom
        sweeps = sweep + 1
        sign, logdet = np.linalg.slogdet(w)
        if sign <= 0:
            raise _PDViolation(f"working covariance lost positive definiteness (sweep {sweep})")
        trace.append(float(logdet))
        if change / (m * (m - 1)) <= threshold:
            converged = True
            break
    omega = _assemble_precision(betas, denoms, m)
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise _PDViolation("assembled precision is not positive definite")
    gap = float(np.sum(s * omega)) - m + lam * _offdiag_l1(omega)
    return PrecisionEstimate(omega, float(lam), converged, sweeps, gap, tuple(trace))


def _assemble_precision(betas, denoms, m):
    omega = np.empty((m, m))
    for j in range(m):
        mask = np.array([i for i in range(m) if i != j])
        ojj = 1.0 / denoms[j]
        omega[j, j] = ojj
        omega[mask, j] = -betas[j] * ojj
    return 0.5 * (omega + omega.T)


def expert_precision(means, lam, standardize: bool = True, **glasso_kw) -> PrecisionEstimate:
    """Precision estimate of the experts from their prediction matrix.

    ``standardize=True`` runs the penalized solve on the correlation
    matrix (making the penalty scale-free) and rescales the result back
    to the covariance scale. Degenerate (constant-prediction) experts
    become isolated nodes.
    """
    s = sample_covariance(means)
    if not standardize:
        return graphical_lasso(s, lam, **glasso_kw)
    d = np.sqrt(np.diag(s))
    floor = 1e-12 * max(float(d.max()), 1.0)
    degenerate = d <= floor
    d = np.where(degenerate, 1.0, d)
    r = s / np.outer(d, d)
    if degenerate.any():
        r[degenerate, :] = 0.0
        r[:, degenerate] = 0.0
    np.fill_diagonal(r, 1.0)
    est = graphical_lasso(r, lam, **glasso_kw)
    omega = est.omega / np.outer(d, d)
    return replace(est, omega=omega)


def build_laplacian(omega) -> np.ndarray:
    """Graph Laplacian of the precision matrix's dependency structure.

    The affinity is |omega_ij| off the diagonal (precision entries are
    signed; clustering needs nonnegative edge weights) and zero on it;
    L = diag(row sums) - affinity.
    """
    omega = _check_square_symmetric(omega)
    affinity = np.abs(omega)
    np.fill_diagonal(affinity, 0.0)
    return np.diag(affinity.sum(axis=1)) - affinity


@dataclass(frozen=True)
class ClusterAssignment:
    """Expert -> cluster labels; exactly n_clusters nonempty clusters."""

    labels: np.ndarray
    n_clusters: int

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)


def spectral_clustering(omega, n_clusters: int, seed: int = 0) -> ClusterAssignment:
    """Cluster experts by the spectrum of the dependency Laplacian.

    Takes the eigenvectors of the n_clusters smallest eigenvalues,
    row-normalizes the embedding, and k-means clusters the rows (20
    seeded restarts, best inertia). Labels are canonicalized so cluster
    ids increase with the smallest expert index they contain.
    """
    omega = _check_square_symmetric(omega)
    m = omega.shape[0]
    if not 1 <= n_clusters <= m:
        raise ValueError(f"need 1 <= n_clusters <= {m}, got {n_clusters}")
    if n_clusters == 1:
        return ClusterAssignment(np.zeros(m, dtype=np.int64), 1)
    if n_clusters == m:
        return ClusterAssignment(np.arange(m, dtype=np.int64), m)
    lap = build_laplacian(omega)
    _, vecs = np.linalg.eigh(lap)
    embedding = vecs[:, :n_clusters]
    norms = np.linalg.norm(embedding, axis=1, keepdims=True)
    embedding = embedding / np.where(norms > 0.0, norms, 1.0)
    labels = backends.kmeans(embedding, n_clusters, seed=seed, restarts=20, ensure_nonempty=True)
    return ClusterAssignment(_canonical_labels(labels, n_clusters), n_clusters)


def _canonical_labels(labels, n_clusters):
    firsts = [(int(np.flatnonzero(labels == c)[0]), c) for c in range(n_clusters)]
    order = {c: rank for rank, (_, c) in enumerate(sorted(firsts))}
    return np.array([order[int(c)] for c in labels], dtype=np.int64)


def save_matrix(path, matrix, fmt="%.17g"):
    """Write a matrix as plain text, one row per line, space-separated."""
    np.savetxt(path, np.atleast_2d(matrix), fmt=fmt)
