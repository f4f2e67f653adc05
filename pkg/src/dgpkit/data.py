"""Synthetic data generation and CSV ingestion."""

from __future__ import annotations

import csv

import numpy as np

from .gp import Dataset, normalize, transform_with

TOY_TRAIN_RANGE = (0.0, 1.0)
# The test interval deliberately extends past the training range on both
# sides, mixing interpolation with extrapolation.
TOY_TEST_RANGE = (-0.2, 1.2)
TOY_NOISE_SD = 0.2


def toy_function(x):
    """1-d benchmark curve: 5x^2 sin(12x) + (x^3 - 0.5) sin(3x - 0.5) + 4 cos(2x)."""
    x = np.asarray(x, dtype=np.float64)
    return 5.0 * x**2 * np.sin(12.0 * x) + (x**3 - 0.5) * np.sin(3.0 * x - 0.5) + 4.0 * np.cos(2.0 * x)


def gen_toy(n: int, n_t: int, seed: int = 0, noisy_test: bool = True):
    """Seeded toy regression problem: (train, test) datasets, normalized.

    Training inputs are uniform on [0, 1], test inputs uniform on
    [-0.2, 1.2]. Targets are curve values plus N(0, 0.2^2) observation
    noise; the noise term is part of the observable being predicted, so
    test targets carry it as well (``noisy_test=False`` switches the test
    set to the bare curve). Both sets are normalized by the training
    statistics, which are recorded on the datasets.
    """
    if n < 1 or n_t < 1:
        raise ValueError("need n >= 1 and n_t >= 1")
    rng = np.random.default_rng(seed)
    x_train = rng.uniform(*TOY_TRAIN_RANGE, size=n)
    y_train = toy_function(x_train) + rng.normal(0.0, TOY_NOISE_SD, size=n)
    x_test = rng.uniform(*TOY_TEST_RANGE, size=n_t)
    y_test = toy_function(x_test)
    if noisy_test:
        y_test = y_test + rng.normal(0.0, TOY_NOISE_SD, size=n_t)
    train = normalize(Dataset(x_train.reshape(-1, 1), y_train))
    test = transform_with(Dataset(x_test.reshape(-1, 1), y_test), train.norm_stats)
    return train, test


class ParseError(ValueError):
    """CSV cell that could not be interpreted as a number."""


def load_csv(path, target_column: str, normalize_data: bool = False) -> Dataset:
    """Read a numeric CSV with a header row into a Dataset.

    All non-target columns become inputs, in header order. Rows and
    columns in error messages are 1-based and count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        if target_column not in header:
            raise ValueError(f"{path}: no column named {target_column!r} in header {header}")
        target_idx = header.index(target_column)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}")
            parsed = np.empty(len(row))
            for col_no, cell in enumerate(row):
                try:
                    parsed[col_no] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell.strip()!r} at row {line_no}, column {col_no + 1}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    table = np.vstack(rows)
    y = table[:, target_idx]
    x = np.delete(table, target_idx, axis=1)
    data = Dataset(x, y)
    return normalize(data) if normalize_data else data


def write_csv(data: Dataset, path, target_column: str = "y"):
    """Write a dataset back to CSV (inputs as x1..xD, target last)."""
    header = [f"x{d + 1}" for d in range(data.dim)] + [target_column]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for xi, yi in zip(data.inputs, data.targets):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
