"""Synthetic processes, windowing, splits, standardisation and CSV I/O."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DataError
from .rng import gaussian, stream

NLAR_COEFS = {
    "intercept": -0.17,
    "lag1": 0.85,
    "lag2": 0.14,
    "lag3": -0.31,
    "lag7": 0.08,
    "g1": 12.80,
    "g2": 2.44,
}
NLAR_TRUE_LAGS = frozenset({1, 2, 3, 7})
EXPAR_TRUE_LAGS = frozenset({1})


@dataclass
class SeriesDataset:
    values: np.ndarray
    exog: np.ndarray | None = None
    mean: float | None = None
    sd: float | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if self.exog is not None:
            self.exog = np.asarray(self.exog, dtype=np.float64)
            if self.exog.ndim == 1:
                self.exog = self.exog[:, None]
            if self.exog.shape[0] != self.values.size:
                raise DataError("exogenous matrix must have one row per observation")
            if not np.all(np.isfinite(self.exog)):
                raise DataError("exogenous matrix contains non-finite values")

    def __len__(self):
        return self.values.size

    @property
    def n_exog(self) -> int:
        return 0 if self.exog is None else self.exog.shape[1]


@dataclass
class PanelDataset:
    """Equal-length sequences; the last ``horizon`` values of each are targets."""

    sequences: np.ndarray
    horizon: int
    splits: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float64)
        if self.sequences.ndim != 2:
            raise DataError("panel sequences must form a 2-D array")
        if self.horizon < 1 or self.horizon >= self.sequences.shape[1]:
            raise DataError("horizon must be >= 1 and shorter than the sequences")
        seen = set()
        for name, idx in self.splits.items():
            idx = set(int(i) for i in idx)
            if seen & idx:
                raise DataError(f"split {name!r} overlaps another split")
            seen |= idx

    def subset(self, split: str) -> np.ndarray:
        return self.sequences[np.asarray(self.splits[split], dtype=int)]


# -- generators ---------------------------------------------------------------


def _noise(seed: int, tag: str, size: int, noise_scale: float) -> np.ndarray:
    if noise_scale == 0.0:
        return np.zeros(size)
    return noise_scale * gaussian(stream(seed, "data", tag), size)


def nlar_mean(lags: np.ndarray) -> float:
    """Conditional mean given ``lags[k] = y_{i-1-k}`` for ``k = 0..6``."""
    y1, y2, y3, y7 = lags[0], lags[1], lags[2], lags[6]
    c = NLAR_COEFS
    g1 = expit(0.46 * (0.29 * y1 - 0.87 * y2 + 0.40 * y7 - 6.68))
    g2 = expit(1.17e-3 * (0.83 * y1 - 0.53 * y2 - 0.18 * y7 + 0.38))
    return (
        c["intercept"] + c["lag1"] * y1 + c["lag2"] * y2 + c["lag3"] * y3 + c["lag7"] * y7
        + c["g1"] * g1 + c["g2"] * g2
    )


def gen_nlar(n: int, seed: int, burn_in: int = 200, noise_scale: float = 1.0) -> SeriesDataset:
    """Nonlinear AR process of order 7 driven by two logistic terms."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 7:
        raise ValueError("burn_in must be >= 7")
    total = n + burn_in
    eta = _noise(seed, "nlar", total, noise_scale)
    y = np.zeros(total + 7)  # seven zeros of history in front
    for i in range(total):
        j = i + 7
        y[j] = nlar_mean(y[j - 7 : j][::-1]) + eta[i]
    manifest = {"kind": "nlar", "n": n, "seed": seed, "burn_in": burn_in, "params": dict(NLAR_COEFS)}
    return SeriesDataset(y[7 + burn_in :], manifest=manifest)


def gen_expar(n: int, seed: int, burn_in: int = 200, noise_scale: float = 1.0, y0: float = 0.0) -> SeriesDataset:
    """Exponential AR(1): ``y_i = (0.8 - 1.1 exp(-50 y_{i-1}^2)) y_{i-1} + eta_i``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    total = n + burn_in
    eta = _noise(seed, "expar", total, noise_scale)
    y = np.empty(total)
    prev = float(y0)
    for i in range(total):
        prev = (0.8 - 1.1 * np.exp(-50.0 * prev * prev)) * prev + eta[i]
        y[i] = prev
    manifest = {
        "kind": "expar",
        "n": n,
        "seed": seed,
        "burn_in": burn_in,
        "params": {"a": 0.8, "b": -1.1, "c": -50.0},
    }
    return SeriesDataset(y[burn_in:], manifest=manifest)


def gen_ar1_panel(
    n_sequences: int,
    length: int,
    horizon: int,
    phi: float,
    seed: int,
    splits: dict | None = None,
) -> PanelDataset:
    """Independent stationary AR(1) sequences with unit innovations.

    ``splits`` maps split names to counts, assigned to consecutive sequences.
    """
    if abs(phi) >= 1.0:
        raise ValueError("|phi| must be < 1 for a stationary AR(1)")
    if n_sequences < 1 or length < 2:
        raise ValueError("need at least one sequence of length >= 2")
    gen = stream(seed, "data", "ar1_panel")
    eps = gaussian(gen, (n_sequences, length))
    y = np.empty((n_sequences, length))
    y[:, 0] = eps[:, 0] / np.sqrt(1.0 - phi * phi)
    for t in range(1, length):
        y[:, t] = phi * y[:, t - 1] + eps[:, t]
    split_idx = {}
    if splits:
        if sum(splits.values()) > n_sequences:
            raise DataError("split sizes exceed the number of sequences")
        start = 0
        for name, count in splits.items():
            split_idx[name] = np.arange(start, start + count)
            start += count
    manifest = {
        "kind": "ar1_panel",
        "n": n_sequences,
        "length": length,
        "seed": seed,
        "params": {"phi": phi, "horizon": horizon},
    }
    return PanelDataset(y, horizon, split_idx, manifest)


# -- windowing ----------------------------------------------------------------


@dataclass
class Windows:
    """Model-ready samples: ``inputs (N, steps, L_0)``, ``targets (N, m)``."""

    inputs: np.ndarray
    targets: np.ndarray
    index: np.ndarray  # position of each target in the source series

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, rows) -> "Windows":
        rows = np.asarray(rows)
        return Windows(self.inputs[rows], self.targets[rows], self.index[rows])


def window_series(series, W: int, M_l: int, exog=None) -> Windows:
    """Cut a series into overlapping RNN windows.

    The window for target ``y[i]`` holds ``M_l`` lag vectors for steps
    ``j = i-M_l+1 .. i``, each ``(y[j-1], ..., y[j-W])`` followed by the
    exogenous row ``exog[j]`` when given.  There are ``n - M_l - W + 1``
    windows.
    """
    if isinstance(series, SeriesDataset):
        exog = series.exog if exog is None else exog
        series = series.values
    y = np.asarray(series, dtype=np.float64).ravel()
    if W < 1 or M_l < 1:
        raise ValueError("W and M_l must be >= 1")
    n = y.size
    count = n - M_l - W + 1
    if count < 1:
        raise DataError(f"series of length {n} is too short for W={W}, M_l={M_l}")
    first = M_l + W - 1
    targets = np.arange(first, n)
    steps = targets[:, None] - (M_l - 1) + np.arange(M_l)[None, :]  # (N, M_l)
    lags = steps[:, :, None] - 1 - np.arange(W)[None, None, :]  # (N, M_l, W)
    inputs = y[lags]
    if exog is not None:
        exog = np.asarray(exog, dtype=np.float64)
        if exog.ndim == 1:
            exog = exog[:, None]
        inputs = np.concatenate([inputs, exog[steps]], axis=2)
    return Windows(inputs, y[targets][:, None], targets)


def panel_windows(sequences: np.ndarray, horizon: int) -> Windows:
    """Each sequence's leading values feed the RNN one per step; the last
    ``horizon`` values are the targets."""
    seqs = np.asarray(sequences, dtype=np.float64)
    T = seqs.shape[1] - horizon
    if T < 1:
        raise DataError("sequences are not longer than the horizon")
    return Windows(seqs[:, :T, None], seqs[:, T:], np.arange(seqs.shape[0]))


def contiguous_splits(n_train: int, n_val: int, n_test: int) -> dict:
    """Consecutive index ranges of one realisation."""
    if min(n_train, n_val, n_test) < 0 or n_train < 1:
        raise ValueError("split sizes must be non-negative with a non-empty train split")
    a, b = n_train, n_train + n_val
    return {"train": (0, a), "val": (a, b), "test": (b, b + n_test)}


def select_targets(windows: Windows, bounds: tuple) -> Windows:
    """Windows whose target index lies in ``[lo, hi)``."""
    lo, hi = bounds
    return windows.take(np.flatnonzero((windows.index >= lo) & (windows.index < hi)))


# -- standardisation -------------------------------------------------------------


def standardize(dataset: SeriesDataset, train_stop: int | None = None) -> SeriesDataset:
    """Z-score the whole series using statistics of ``values[:train_stop]``."""
    train = dataset.values[:train_stop]
    if train.size < 2:
        raise DataError("need at least two training values to standardise")
    mean = float(np.mean(train))
    sd = float(np.std(train))
    if sd == 0.0:
        raise DataError("training split has zero variance")
    return replace(dataset, values=(dataset.values - mean) / sd, mean=mean, sd=sd)


def destandardize(values, dataset: SeriesDataset) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if dataset.mean is None:
        return values
    return values * dataset.sd + dataset.mean


# -- CSV ------------------------------------------------------------------------


def write_csv(path, dataset: SeriesDataset) -> None:
    cols = ["y"] + [f"x{k + 1}" for k in range(dataset.n_exog)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, v in enumerate(dataset.values):
            row = [format(v, ".17g")]
            if dataset.exog is not None:
                row += [format(x, ".17g") for x in dataset.exog[i]]
            w.writerow(row)


def read_csv(path) -> SeriesDataset:
    """First column is the series; further columns are exogenous inputs.

    A first row whose first cell is ``y`` is treated as a header.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    if rows[0][0].strip().lower() == "y":
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")
    width = len(rows[0])
    data = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 1} has {len(r)} cells, expected {width}")
        for j, cell in enumerate(r):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} in data row {i + 1}") from None
    exog = data[:, 1:] if width > 1 else None
    return SeriesDataset(data[:, 0], exog=exog, manifest={"kind": "csv", "path": str(path), "n": len(rows)})


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
