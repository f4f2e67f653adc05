"""Prediction-quality metrics for regression benchmarks."""

from __future__ import annotations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def smse(pred_mean, y_true) -> float:
    """Mean squared error divided by the (unbiased) variance of y_true.

    A predictor that always outputs the sample mean scores ~1; lower is
    better, 0 is perfect.
    """
    pred_mean = np.asarray(pred_mean, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if pred_mean.shape != y_true.shape:
        raise ValueError(f"shape mismatch: {pred_mean.shape} vs {y_true.shape}")
    if y_true.shape[0] < 2:
        raise ValueError("need at least 2 test points")
    denom = float(y_true.var(ddof=1))
    if denom <= 0.0:
        raise ValueError("target variance is zero, smse is undefined")
    return float(np.mean((pred_mean - y_true) ** 2) / denom)


def msll(pred_mean, pred_var, y_true, train_mean, train_var) -> float:
    """Mean standardized log loss.

    Average Gaussian negative log predictive density, minus the same
    quantity for the trivial predictor N(train_mean, train_var). Zero
    means no better than the trivial predictor; negative is better.
    """
    pred_mean = np.asarray(pred_mean, dtype=np.float64)
    pred_var = np.asarray(pred_var, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if not (pred_mean.shape == pred_var.shape == y_true.shape):
        raise ValueError("pred_mean, pred_var and y_true must share a shape")
    if np.any(pred_var <= 0.0) or not np.all(np.isfinite(pred_var)):
        raise ValueError("predictive variances must be finite and strictly positive")
    if train_var <= 0.0:
        raise ValueError("training variance must be strictly positive")
    nll_model = 0.5 * (LOG_2PI + np.log(pred_var)) + (y_true - pred_mean) ** 2 / (2.0 * pred_var)
    nll_trivial = 0.5 * (LOG_2PI + np.log(train_var)) + (y_true - train_mean) ** 2 / (2.0 * train_var)
    return float(np.mean(nll_model - nll_trivial))
