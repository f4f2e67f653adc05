"""Exact Gaussian-process regression with a squared-exponential ARD kernel.

The covariance between inputs x and x' is

    k(x, x') = sf2 * exp(-0.5 * sum_d (x_d - x'_d)^2 / L_d)

where ``L_d`` is the ARD parameter of dimension d; it divides the squared
distance directly and therefore plays the role of a squared length-scale.
Hyperparameters are trained by maximizing the log-marginal likelihood

    log p(y|X) = -0.5 y'C^{-1}y - 0.5 log|C| - (n/2) log(2*pi),
    C = K + noise * I

via quasi-Newton ascent on the log-hyperparameters, with analytic
gradients from the trace identity 0.5 * tr((aa' - C^{-1}) dC/dtheta),
a = C^{-1}y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, lapack, solve_triangular
from scipy.optimize import minimize

from . import backends

LOG_2PI = float(np.log(2.0 * np.pi))

# Jitter escalation for failed Cholesky factorizations, as multiples of
# mean(diag(C)): start small, grow by 10x, give up past 1e-4.
JITTER_START = 1e-10
JITTER_MAX = 1e-4


class NumericalError(RuntimeError):
    """Linear-algebra failure that survived jitter escalation.

    ``jitters`` records the absolute jitter values that were attempted.
    """

    def __init__(self, message, jitters=()):
        super().__init__(message)
        self.jitters = tuple(jitters)


@dataclass(frozen=True)
class Hyperparams:
    """SE-ARD kernel and noise hyperparameters, stored as logs.

    Fields hold log-values so that unconstrained optimization is possible;
    the exponentiated accessors are therefore always strictly positive.
    """

    log_signal_variance: float
    log_length_scales: np.ndarray
    log_noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_length_scales, dtype=np.float64))
        object.__setattr__(self, "log_length_scales", ls)
        vec = self.log_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("hyperparameters must be finite in log space")

    @classmethod
    def from_values(cls, signal_variance, length_scales, noise_variance):
        ls = np.atleast_1d(np.asarray(length_scales, dtype=np.float64))
        if signal_variance <= 0 or noise_variance <= 0 or np.any(ls <= 0):
            raise ValueError("hyperparameters must be strictly positive")
        return cls(float(np.log(signal_variance)), np.log(ls), float(np.log(noise_variance)))

    @classmethod
    def from_log_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(float(vec[0]), vec[1:-1].copy(), float(vec[-1]))

    def log_vector(self):
        return np.concatenate(([self.log_signal_variance], self.log_length_scales, [self.log_noise_variance]))

    @property
    def signal_variance(self):
        return float(np.exp(self.log_signal_variance))

    @property
    def length_scales(self):
        return np.exp(self.log_length_scales)

    @property
    def noise_variance(self):
        return float(np.exp(self.log_noise_variance))

    @property
    def dim(self):
        return self.log_length_scales.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-column input statistics and target statistics used to normalize."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float


@dataclass(frozen=True)
class Dataset:
    """Training inputs (n, D), targets (n,) and optional normalization stats."""

    inputs: np.ndarray
    targets: np.ndarray
    norm_stats: NormStats | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.targets, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"inputs must be 2-d (n, D), got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("targets must be a vector matching the number of inputs")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("need n >= 1 and D >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("inputs/targets contain non-finite entries")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, indices):
        """Dataset restricted to the given row indices (stats carried over)."""
        idx = np.asarray(indices)
        return Dataset(self.inputs[idx], self.targets[idx], self.norm_stats)


def normalize(data: Dataset) -> Dataset:
    """Shift/scale every input column and the target to zero mean, unit std.

    Constant input columns are left unscaled (std treated as 1); a constant
    target cannot be normalized and raises ValueError. The statistics used
    are recorded on the returned dataset.
    """
    x_mean = data.inputs.mean(axis=0)
    x_std = data.inputs.std(axis=0)
    x_std = np.where(x_std > 0.0, x_std, 1.0)
    y_mean = float(data.targets.mean())
    y_std = float(data.targets.std())
    if data.n > 1 and y_std == 0.0:
        raise ValueError("cannot normalize a constant target")
    if y_std == 0.0:
        y_std = 1.0
    stats = NormStats(x_mean, x_std, y_mean, y_std)
    return transform_with(data, stats)


def transform_with(data: Dataset, stats: NormStats) -> Dataset:
    """Apply existing normalization statistics (e.g. to a test set)."""
    x = (data.inputs - stats.x_mean) / stats.x_std
    y = (data.targets - stats.y_mean) / stats.y_std
    return Dataset(x, y, stats)


def kernel_matrix(x1, x2, params: Hyperparams):
    """SE-ARD covariance between the rows of x1 (n1, D) and x2 (n2, D)."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    d = params.dim
    if x1.shape[1] != d or x2.shape[1] != d:
        raise ValueError(
            f"input dimension mismatch: x1 has {x1.shape[1]}, x2 has {x2.shape[1]}, params expect {d}"
        )
    if x1 is x2:
        return backends.se_ard_sym(x1, params.signal_variance, params.length_scales)
    return backends.se_ard(x1, x2, params.signal_variance, params.length_scales)


def _chol_with_jitter(c, mean_diag):
    """Lower Cholesky factor of c, escalating diagonal jitter on failure."""
    try:
        return cholesky(c, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    attempted = []
    factor = JITTER_START
    while factor <= JITTER_MAX * (1.0 + 1e-12):
        jitter = factor * mean_diag
        attempted.append(jitter)
        try:
            return cholesky(c + jitter * np.eye(c.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            factor *= 10.0
    raise NumericalError(
        f"Cholesky failed after jitter escalation up to {attempted[-1]:.3e}", jitters=attempted
    )


def _chol_inverse(chol_lower):
    """Full inverse of C from its lower Cholesky factor (LAPACK dpotri)."""
    inv, info = lapack.dpotri(chol_lower, lower=1)
    if info != 0:
        raise NumericalError(f"dpotri failed with info={info}")
    return np.tril(inv) + np.tril(inv, -1).T


def log_marginal_likelihood(data: Dataset, params: Hyperparams):
    """Value and gradient (over log-hyperparameters) of log p(y|X).

    Gradient layout matches ``Hyperparams.log_vector``: signal variance
    first, then one entry per length-scale, noise variance last.
    """
    if params.dim != data.dim:
        raise ValueError(f"params expect D={params.dim}, data has D={data.dim}")
    x, y = data.inputs, data.targets
    n = data.n
    noise = params.noise_variance
    k = kernel_matrix(x, x, params)
    c = k + noise * np.eye(n)
    chol, _ = _chol_with_jitter(c, float(np.mean(np.diag(c))))
    alpha = cho_solve((chol, True), y)
    value = float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * LOG_2PI)

    c_inv = _chol_inverse(chol)
    a = np.outer(alpha, alpha) - c_inv
    b = a * k
    grad_sf2 = 0.5 * float(b.sum())
    # d k / d log L_d = k * 0.5 * (x_d - x'_d)^2 / L_d
    sums = backends.weighted_sqdist_sums(x, b)
    grad_ls = 0.25 * sums / params.length_scales
    grad_noise = 0.5 * noise * float(np.trace(a))
    grad = np.concatenate(([grad_sf2], grad_ls, [grad_noise]))
    return value, grad


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 100
    grad_tol: float = 1e-6


# Box in log space keeping exp() finite while leaving the optimizer
# effectively unconstrained for any sanely scaled data.
_LOG_BOUND = 25.0


def fit_hyperparams(data: Dataset, init: Hyperparams, opt_cfg: OptimizerConfig | None = None) -> Hyperparams:
    """Maximize the log-marginal likelihood from ``init`` (L-BFGS-B).

    The returned parameters never score below ``init``; if the optimizer
    cannot improve (or ``init`` already satisfies the gradient tolerance)
    ``init`` is returned unchanged.
    """
    cfg = opt_cfg or OptimizerConfig()
    f0, g0 = log_marginal_likelihood(data, init)
    if not np.isfinite(f0):
        raise ValueError("log-marginal likelihood is not finite at the initial hyperparameters")
    if np.max(np.abs(g0)) < cfg.grad_tol:
        return init

    def objective(u):
        try:
            value, grad = log_marginal_likelihood(data, Hyperparams.from_log_vector(u))
        except NumericalError:
            return 1e25, np.zeros_like(u)
        if not np.isfinite(value):
            return 1e25, np.zeros_like(u)
        return -value, -grad

    u0 = init.log_vector()
    bounds = [(-_LOG_BOUND, _LOG_BOUND)] * u0.shape[0]
    res = minimize(
        objective,
        u0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": cfg.max_iter, "gtol": cfg.grad_tol, "ftol": 1e-12},
    )
    if not np.isfinite(res.fun) or -res.fun < f0:
        return init
    return Hyperparams.from_log_vector(res.x)


# Candidate rescalings of the median-distance length-scale heuristic. The
# marginal likelihood is multimodal in the length-scales; starting from the
# bare median lands in the white-noise basin whenever the true scale is much
# shorter than the input span, so the best-scoring rescaling is used instead.
_INIT_SCALES = (4.0, 1.0, 0.25, 1.0 / 16.0, 1.0 / 64.0, 1.0 / 256.0)


def default_init(data: Dataset) -> Hyperparams:
    """Heuristic starting point: sf2 = var(y), noise = 0.01 * var(y), and
    L_d = (median pairwise distance in dimension d)^2 rescaled by whichever
    factor in ``_INIT_SCALES`` scores the best marginal likelihood on a
    deterministic subsample."""
    y_var = float(data.targets.var())
    if y_var <= 0.0:
        y_var = 1.0
    # deterministic subsample for the pairwise medians
    step = max(1, data.n // 500)
    x = data.inputs[::step]
    ls = np.empty(data.dim)
    for d in range(data.dim):
        col = x[:, d]
        diffs = np.abs(col[:, None] - col[None, :])
        med = float(np.median(diffs[np.triu_indices(col.shape[0], k=1)])) if col.shape[0] > 1 else 0.0
        ls[d] = med * med if med > 0.0 else 1.0

    probe_step = max(1, data.n // 512)
    probe = data.subset(np.arange(0, data.n, probe_step))
    best = None
    for scale in _INIT_SCALES:
        candidate = Hyperparams.from_values(y_var, ls * scale, 0.01 * y_var)
        try:
            value, _ = log_marginal_likelihood(probe, candidate)
        except NumericalError:
            continue
        if np.isfinite(value) and (best is None or value > best[0]):
            best = (value, candidate)
    if best is None:
        return Hyperparams.from_values(y_var, ls, 0.01 * y_var)
    return best[1]


@dataclass(frozen=True)
class PosteriorGP:
    """Immutable GP posterior: Cholesky factor of K + noise*I and solved weights."""

    data: Dataset
    params: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @classmethod
    def build(cls, data: Dataset, params: Hyperparams) -> "PosteriorGP":
        if params.dim != data.dim:
            raise ValueError(f"params expect D={params.dim}, data has D={data.dim}")
        k = kernel_matrix(data.inputs, data.inputs, params)
        c = k + params.noise_variance * np.eye(data.n)
        chol, jitter = _chol_with_jitter(c, float(np.mean(np.diag(c))))
        alpha = cho_solve((chol, True), data.targets)
        return cls(data, params, chol, alpha, jitter)


def gp_predict(model: PosteriorGP, x_star):
    """Posterior mean and latent variance diag(k** - k*' C^{-1} k*).

    The returned variance excludes observation noise; add the model's
    noise variance for the predictive variance of a new observation.
    """
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    if x_star.shape[1] != model.data.dim:
        raise ValueError(f"x_star has D={x_star.shape[1]}, model expects D={model.data.dim}")
    k_star = kernel_matrix(model.data.inputs, x_star, model.params)
    mean = k_star.T @ model.alpha
    v = solve_triangular(model.chol, k_star, lower=True)
    var = model.params.signal_variance - np.sum(v * v, axis=0)
    return mean, np.clip(var, 0.0, None)
