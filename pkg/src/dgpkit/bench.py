"""Benchmark harness: run aggregation methods on toy or CSV data.

For every (expert count, seed) pair the harness partitions the training
set, fits the shared hyperparameters once, builds the expert posteriors
and their test predictions once, and then evaluates each requested
method on those shared inputs. Augmented-expert work needed by grbcm and
dgea is computed once per pair and its cost attributed identically to
both methods.

Timing columns: ``train_s`` covers the shared hyperparameter fit plus
expert posterior construction (and augmented-posterior construction for
grbcm/dgea); ``predict_s`` covers everything the method does at the test
points beyond the shared per-expert predictions (whose one-off cost is
reported separately in the text report). Metrics are computed in the
normalized data space.
"""

from __future__ import annotations

import io
import json
import os
import platform
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import backends
from .aggregation import (
    bcm,
    gpoe,
    grbcm_combine,
    poe,
    rbcm,
)
from .data import TOY_TEST_RANGE, gen_toy, load_csv
from .dgea import DgeaConfig, dgea_pipeline, default_cluster_count
from .dependency import save_matrix
from .experts import partition, predict_experts, train_experts
from .gp import Dataset, OptimizerConfig, PosteriorGP, gp_predict, normalize, transform_with
from .metrics import msll, smse

METHODS = ("poe", "gpoe", "gpoe-entropy", "bcm", "rbcm", "grbcm", "dgea")


@dataclass
class BenchmarkSpec:
    """Everything needed to reproduce one benchmark run."""

    dataset: str = "toy"  # "toy" | "csv"
    n: int = 10_000
    n_t: int = 1_000
    data_seed: int = 0
    train_path: str | None = None
    test_path: str | None = None
    target: str | None = None
    test_fraction: float | None = None
    experts: list[int] | None = None
    points_per_expert: list[int] | None = None
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seeds: list[int] = field(default_factory=lambda: [0])
    scheme: str = "random"
    lam: float = 0.1
    clusters: int | None = None
    outer: str = "gpoe"
    probe_fraction: float | None = None
    opt_max_iter: int = 50
    opt_grad_tol: float = 1e-5
    shared_hyperparams: bool = True
    output_csv: str | None = None
    report_path: str | None = None
    dump_graph: str | None = None
    dump_predictions: str | None = None

    def validate(self):
        if self.dataset not in ("toy", "csv"):
            raise ValueError(f"dataset must be 'toy' or 'csv', got {self.dataset!r}")
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.experts is not None and self.points_per_expert is not None:
            raise ValueError("give either expert counts or points per expert, not both")
        if self.dataset == "csv":
            if not self.train_path or not self.target:
                raise ValueError("csv runs need train_path and target")
            if not self.test_path and not self.test_fraction:
                raise ValueError("csv runs need test_path or test_fraction")

    @classmethod
    def from_json(cls, path) -> "BenchmarkSpec":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


# Default expert sizing when the spec names neither expert counts nor
# points per expert: the standard sweep of partition sizes.
DEFAULT_POINTS_PER_EXPERT = (200, 250, 330, 500, 1000)


@dataclass(frozen=True)
class MethodRow:
    method: str
    seed: int
    m: int
    smse: float
    msll: float
    train_s: float
    predict_s: float

    def metric_key(self) -> str:
        return f"{self.method},{self.seed},{self.m},{self.smse!r},{self.msll!r}"


@dataclass
class BenchmarkResult:
    rows: list[MethodRow]
    errors: list[dict]
    fingerprint: dict
    notes: list[str]
    shared_timings: list[dict]

    def metric_lines(self) -> list[str]:
        return [row.metric_key() for row in self.rows]

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.csv_text())

    def csv_text(self) -> str:
        out = io.StringIO()
        out.write("method,seed,M,SMSE,MSLL,train_s,predict_s\n")
        for r in self.rows:
            out.write(f"{r.method},{r.seed},{r.m},{r.smse!r},{r.msll!r},{r.train_s:.6f},{r.predict_s:.6f}\n")
        return out.getvalue()

    def summary(self) -> str:
        lines = []
        lines.append("environment: " + ", ".join(f"{k}={v}" for k, v in self.fingerprint.items()))
        for note in self.notes:
            lines.append("note: " + note)
        for st in self.shared_timings:
            lines.append(
                "shared M={m} seed={seed}: train {train_s:.3f}s, expert predictions {predict_s:.3f}s".format(**st)
            )
        by_m: dict[int, dict[str, list[MethodRow]]] = {}
        for row in self.rows:
            by_m.setdefault(row.m, {}).setdefault(row.method, []).append(row)
        header = f"{'M':>5} {'method':<14} {'median SMSE':>12} {'median MSLL':>12} {'total time (s)':>15}"
        lines.append(header)
        lines.append("-" * len(header))
        for m in sorted(by_m):
            for method, rows in by_m[m].items():
                med_smse = float(np.median([r.smse for r in rows]))
                med_msll = float(np.median([r.msll for r in rows]))
                total = sum(r.train_s + r.predict_s for r in rows)
                lines.append(f"{m:>5} {method:<14} {med_smse:>12.5f} {med_msll:>12.5f} {total:>15.3f}")
        for err in self.errors:
            lines.append("error: {method} M={m} seed={seed}: {message}".format(**err))
        return "\n".join(lines)


def environment_fingerprint() -> dict:
    import numpy
    import scipy

    info = {
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
        "cpus": os.cpu_count(),
        "numba": backends.NUMBA_ENABLED,
    }
    if backends.HAVE_NUMBA:
        import numba

        info["numba_version"] = numba.__version__
    return info


def _resolve_datasets(spec: BenchmarkSpec):
    if spec.dataset == "toy":
        train, test = gen_toy(spec.n, spec.n_t, seed=spec.data_seed)
        return train, test
    train_raw = load_csv(spec.train_path, spec.target, normalize_data=False)
    if spec.test_path:
        test_raw = load_csv(spec.test_path, spec.target, normalize_data=False)
    else:
        rng = np.random.default_rng(spec.data_seed)
        perm = rng.permutation(train_raw.n)
        n_test = max(1, int(round(spec.test_fraction * train_raw.n)))
        test_raw = train_raw.subset(perm[:n_test])
        train_raw = train_raw.subset(perm[n_test:])
    train = normalize(train_raw)
    test = transform_with(test_raw, train.norm_stats)
    return train, test


def _resolve_expert_counts(spec: BenchmarkSpec, n: int) -> list[int]:
    if spec.experts is not None:
        counts = list(spec.experts)
    else:
        ppe = spec.points_per_expert if spec.points_per_expert is not None else list(DEFAULT_POINTS_PER_EXPERT)
        counts = [int(round(n / p)) for p in ppe]
    return [max(1, min(n, int(m))) for m in counts]


def _dump_path(base: str, suffix: str, m: int, seed: int, single: bool) -> str:
    return f"{base}{suffix}" if single else f"{base}.M{m}.seed{seed}{suffix}"


def run_benchmark(spec: BenchmarkSpec) -> BenchmarkResult:
    spec.validate()
    train, test = _resolve_datasets(spec)
    x_star = test.inputs
    y_test = test.targets
    train_mean = float(train.targets.mean())
    train_var = float(train.targets.var(ddof=1))
    opt_cfg = OptimizerConfig(max_iter=spec.opt_max_iter, grad_tol=spec.opt_grad_tol)

    counts = _resolve_expert_counts(spec, train.n)
    notes = []
    if spec.dataset == "toy":
        notes.append(f"toy test inputs drawn from {list(TOY_TEST_RANGE)} (training range is [0, 1])")
    notes.append("metrics computed on normalized targets")
    if spec.probe_fraction is not None:
        notes.append(f"dgea clustering used a probe subset of {spec.probe_fraction:.0%} of the test points")

    rows: list[MethodRow] = []
    errors: list[dict] = []
    shared_timings: list[dict] = []
    single_combo = len(counts) == 1 and len(spec.seeds) == 1
    backends.warmup()

    for m in counts:
        for seed in spec.seeds:
            parts = partition(train, m, spec.scheme, seed)
            t0 = time.perf_counter()
            experts = train_experts(train, parts, opt_cfg, shared=spec.shared_hyperparams)
            shared_train_s = time.perf_counter() - t0
            t0 = time.perf_counter()
            preds = predict_experts(experts, x_star)
            shared_predict_s = time.perf_counter() - t0
            shared_timings.append(
                {"m": m, "seed": seed, "train_s": shared_train_s, "predict_s": shared_predict_s}
            )
            params = experts[0].hyperparams

            aug = None
            aug_build_s = aug_predict_s = 0.0
            if m >= 2 and any(meth in spec.methods for meth in ("grbcm", "dgea")):
                from .aggregation import augmented_posteriors, predict_augmented

                t0 = time.perf_counter()
                built = augmented_posteriors(train, parts, params, base_id=0)
                aug_build_s = time.perf_counter() - t0
                t0 = time.perf_counter()
                aug = predict_augmented(built, x_star)
                aug_predict_s = time.perf_counter() - t0

            dgea_cfg = DgeaConfig(
                lam=spec.lam,
                clusters=spec.clusters if spec.clusters is not None else default_cluster_count(m),
                outer=spec.outer,
                seed=seed,
                probe_fraction=spec.probe_fraction,
            )

            method_outputs = {}
            for method in spec.methods:
                try:
                    t0 = time.perf_counter()
                    diagnostics = None
                    if method == "poe":
                        agg = poe(preds)
                    elif method == "gpoe":
                        agg = gpoe(preds, "uniform")
                    elif method == "gpoe-entropy":
                        agg = gpoe(preds, "entropy")
                    elif method == "bcm":
                        agg = bcm(preds)
                    elif method == "rbcm":
                        agg = rbcm(preds)
                    elif method == "grbcm":
                        if aug is None:
                            raise ValueError("grbcm needs at least 2 experts")
                        agg = grbcm_combine(aug)
                    elif method == "dgea":
                        if aug is None:
                            raise ValueError("dgea needs at least 2 experts")
                        agg, diagnostics = dgea_pipeline(
                            train, parts, x_star, dgea_cfg, preds=preds, augmented=aug
                        )
                    marginal_s = time.perf_counter() - t0
                    uses_aug = method in ("grbcm", "dgea")
                    row = MethodRow(
                        method=method,
                        seed=seed,
                        m=m,
                        smse=smse(agg.means, y_test),
                        msll=msll(agg.means, agg.variances, y_test, train_mean, train_var),
                        train_s=shared_train_s + (aug_build_s if uses_aug else 0.0),
                        predict_s=marginal_s + (aug_predict_s if uses_aug else 0.0),
                    )
                    rows.append(row)
                    method_outputs[method] = agg
                    if method == "dgea" and spec.dump_graph and diagnostics is not None:
                        save_matrix(
                            _dump_path(spec.dump_graph, ".omega.txt", m, seed, single_combo),
                            diagnostics.precision.omega,
                        )
                        save_matrix(
                            _dump_path(spec.dump_graph, ".labels.txt", m, seed, single_combo),
                            diagnostics.clusters.labels,
                            fmt="%d",
                        )
                except Exception as exc:  # per-method failures must not sink the run
                    errors.append({"method": method, "seed": seed, "m": m, "message": str(exc)})
            if spec.dump_predictions and method_outputs:
                _write_predictions(
                    _dump_path(spec.dump_predictions, ".csv", m, seed, single_combo), y_test, method_outputs
                )

    result = BenchmarkResult(rows, errors, environment_fingerprint(), notes, shared_timings)
    if spec.output_csv:
        result.write_csv(spec.output_csv)
    if spec.report_path:
        with open(spec.report_path, "w", encoding="utf-8") as fh:
            fh.write(result.summary() + "\n")
    return result


def _write_predictions(path, y_test, method_outputs):
    methods = list(method_outputs)
    with open(path, "w", encoding="utf-8") as fh:
        header = ["index", "y_true"]
        for m in methods:
            header += [f"mean_{m}", f"var_{m}"]
        fh.write(",".join(header) + "\n")
        for i in range(len(y_test)):
            cells = [str(i), repr(float(y_test[i]))]
            for m in methods:
                agg = method_outputs[m]
                cells += [repr(float(agg.means[i])), repr(float(agg.variances[i]))]
            fh.write(",".join(cells) + "\n")


def full_gp_oracle(train: Dataset, params, x_star, include_noise: bool = True):
    """Dense-solve full-GP prediction, independent of the Cholesky path.

    Solves (K + noise I) a = y with a general LU solve and evaluates the
    posterior mean and per-point variance directly; used as the reference
    in equivalence tests. Returns the predictive variance of a new
    observation when include_noise is set.
    """
    from .gp import kernel_matrix

    x = train.inputs
    k = kernel_matrix(x, x, params)
    c = k + params.noise_variance * np.eye(train.n)
    k_star = kernel_matrix(x, np.atleast_2d(x_star), params)
    solved = np.linalg.solve(c, np.column_stack([train.targets[:, None], k_star]))
    alpha = solved[:, 0]
    c_inv_kstar = solved[:, 1:]
    mean = k_star.T @ alpha
    var = params.signal_variance - np.sum(k_star * c_inv_kstar, axis=0)
    if include_noise:
        var = var + params.noise_variance
    return mean, var
