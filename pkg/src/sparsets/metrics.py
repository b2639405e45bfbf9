"""Selection and forecasting metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError


@dataclass
class SelectionResult:
    """Per-replicate selections against a known true lag set."""

    true_set: frozenset
    selected: list  # list of sets, one per replicate
    window: int | None = None
    hidden_links: list = field(default_factory=list)

    def __post_init__(self):
        self.true_set = frozenset(int(j) for j in self.true_set)
        self.selected = [frozenset(int(j) for j in s) for s in self.selected]
        if self.window is not None:
            for s in self.selected:
                if s and (min(s) < 1 or max(s) > self.window):
                    raise MetricError(f"selected lags {sorted(s)} fall outside 1..{self.window}")

    def ar_orders(self) -> list:
        return [max(s) if s else 0 for s in self.selected]


def fsr(results: SelectionResult) -> float:
    """False selection rate: ``sum |S_hat_j - S| / sum |S_hat_j|``."""
    denom = sum(len(s) for s in results.selected)
    if denom == 0:
        raise MetricError("false selection rate undefined: nothing was selected")
    return sum(len(s - results.true_set) for s in results.selected) / denom


def nsr(results: SelectionResult) -> float:
    """Negative selection rate: ``sum |S - S_hat_j| / sum |S|``."""
    if not results.true_set:
        raise MetricError("negative selection rate undefined: empty true set")
    if not results.selected:
        raise MetricError("no replicates")
    denom = len(results.true_set) * len(results.selected)
    return sum(len(results.true_set - s) for s in results.selected) / denom


def _squared_error(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError(f"prediction shape {p.shape} differs from target shape {t.shape}")
    if p.size == 0:
        raise MetricError("empty input")
    return float(np.mean((p - t) ** 2))


def mspe(predictions, targets) -> float:
    """Mean squared prediction error on held-out targets."""
    return _squared_error(predictions, targets)


def msfe(fitted, targets) -> float:
    """Mean squared fitting error on training targets."""
    return _squared_error(fitted, targets)


def coverage_and_length(report, targets) -> dict:
    """Coverage (closed intervals) and width statistics.

    For multi-output reports ``coverage`` is joint: a point counts only when
    every output is covered.  Marginal per-output coverage is also returned.
    """
    t = np.asarray(targets, dtype=np.float64)
    lower, upper = np.asarray(report.lower), np.asarray(report.upper)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != lower.shape:
        raise MetricError(f"targets shape {t.shape} differs from interval shape {lower.shape}")
    inside = (t >= lower) & (t <= upper)
    width = (upper - lower).ravel()
    q1, med, q3 = np.percentile(width, [25, 50, 75])
    return {
        "alpha": float(report.alpha),
        "coverage": float(np.mean(np.all(inside, axis=1))),
        "marginal_coverage": [float(c) for c in np.mean(inside, axis=0)],
        "mean_width": float(np.mean(width)),
        "sd_width": float(np.std(width, ddof=1)) if width.size > 1 else 0.0,
        "median_width": float(med),
        "iqr_width": float(q3 - q1),
    }


def _mean_sd(values):
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return None, None
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def selection_summary(results: SelectionResult, mspes=(), msfes=()) -> dict:
    """Table-style summary across replicates.

    The AR order is reported as null when the window is shorter than the
    true order (the window cannot reveal it).
    """
    true_order = max(results.true_set) if results.true_set else 0
    applicable = results.window is None or results.window >= true_order
    ar_mean, ar_sd = _mean_sd(results.ar_orders()) if applicable else (None, None)
    hl_mean, hl_sd = _mean_sd(results.hidden_links)
    mspe_mean, mspe_sd = _mean_sd(mspes)
    msfe_mean, msfe_sd = _mean_sd(msfes)
    try:
        f = fsr(results)
    except MetricError:
        f = None
    return {
        "fsr": f,
        "nsr": nsr(results),
        "ar_order_mean": ar_mean,
        "ar_order_sd": ar_sd,
        "hidden_links_mean": hl_mean,
        "hidden_links_sd": hl_sd,
        "mspe_mean": mspe_mean,
        "mspe_sd": mspe_sd,
        "msfe_mean": msfe_mean,
        "msfe_sd": msfe_sd,
    }
