"""Prediction intervals for sparse forecasters.

One-step intervals use the delta method on the selected structure::

    sigma2_hat    = RSS / (n - 1)
    varsigma2_hat = g' H^{-1} g,     g = grad of the forecast, H = -hess l_n
    interval      = mu +/- z_{alpha/2} sqrt(varsigma2_hat / n + sigma2_hat)

where ``n`` counts training targets and ``l_n`` is the averaged Gaussian
log-likelihood.  Multi-horizon intervals apply the same recipe per output
with a Bonferroni quantile ``z_{alpha/(2m)}``.  A split-conformal baseline
is provided for comparison.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Windows
from .errors import DataError, SingularHessianError
from .models import Network
from .rng import normal_quantile

__all__ = [
    "HessianBlock",
    "IntervalReport",
    "estimate_sigma2",
    "neg_hessian",
    "interval_one_step",
    "intervals_multi_horizon",
    "split_conformal_baseline",
    "normal_quantile",
]


def _residuals(net: Network, params, mask, windows: Windows) -> np.ndarray:
    return windows.targets - net.predict(params, mask, windows.inputs)


def estimate_sigma2(net: Network, params, mask, windows: Windows, per_output: bool = False):
    """Residual variance with divisor ``count - 1``.

    ``per_output`` returns one value per output column (panel convention);
    otherwise squared residual norms are pooled into one scalar.
    """
    count = len(windows)
    if count < 2:
        raise DataError("need at least two training targets to estimate sigma^2")
    r = _residuals(net, params, mask, windows)
    if per_output:
        return np.sum(r * r, axis=0) / (count - 1)
    return float(np.sum(r * r) / (count - 1))


@dataclass
class HessianBlock:
    matrix: np.ndarray  # symmetrised, jitter not included
    coords: np.ndarray  # parameter indices of the rows
    jitter: float
    factor: tuple = field(repr=False, default=None)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, rhs)

    def quad(self, g: np.ndarray) -> np.ndarray:
        """``g_i' H^{-1} g_i`` for each row of ``g`` (restricted to ``coords``)."""
        g = np.atleast_2d(g)
        return np.einsum("ij,ji->i", g, self.solve(g.T))


def _nll_grad(net: Network, params, mask, windows: Windows, inv_var) -> np.ndarray:
    """Gradient of ``(1/N) sum_i sum_j inv_var_j (y_ij - mu_ij)^2 / 2``."""
    trace = net.build(windows.inputs)
    tape = trace.tape
    resid = tape.sub(trace.outputs[-1], tape.const(windows.targets))
    sq = tape.square(resid)
    if inv_var is not None:
        w = np.broadcast_to(np.asarray(inv_var, dtype=np.float64), windows.targets.shape)
        sq = tape.mul(sq, tape.const(np.ascontiguousarray(w)))
    total = tape.scale(tape.sum(sq), 0.5 / len(windows))
    tape.forward(net.bindings(params, mask), output=total)
    return net.gather(tape.backward(), mask)


def _factor(matrix: np.ndarray, jitter_start: float, jitter_max: float):
    eye = np.eye(matrix.shape[0])
    eps = jitter_start
    while eps <= jitter_max * (1 + 1e-12):
        try:
            return cho_factor(matrix + eps * eye, lower=True), eps
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise SingularHessianError(f"Cholesky failed with jitter up to {jitter_max:g}")


def neg_hessian(
    net: Network,
    params,
    mask,
    windows: Windows,
    sigma2,
    fd_step: float = 1e-5,
    jitter_start: float = 1e-8,
    jitter_max: float = 1e-2,
    method: str = "fd",
) -> HessianBlock:
    """``-hess l_n`` over the unmasked coordinates.

    ``method="fd"`` differences the analytic gradient (central, step
    ``fd_step * max(1, |beta_k|)``); ``"gauss_newton"`` uses
    ``J'J / (N sigma2)`` instead.  ``sigma2`` may be a scalar or one value
    per output.
    """
    params = np.asarray(params, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    coords = np.flatnonzero(mask)
    if coords.size == 0:
        raise ValueError("mask selects no parameters")
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    scalar = sigma2.ndim == 0
    inv_var = None if scalar else 1.0 / sigma2
    k = coords.size

    if method == "fd":
        H = np.empty((k, k))
        for col, idx in enumerate(coords):
            h = fd_step * max(1.0, abs(params[idx]))
            up = params.copy()
            up[idx] += h
            dn = params.copy()
            dn[idx] -= h
            g_up = _nll_grad(net, up, mask, windows, inv_var)[coords]
            g_dn = _nll_grad(net, dn, mask, windows, inv_var)[coords]
            H[:, col] = (g_up - g_dn) / (2.0 * h)
    elif method == "gauss_newton":
        J = net.output_gradients(params, mask, windows.inputs)[:, :, coords]  # (N, m, k)
        w = np.ones(J.shape[1]) if scalar else inv_var
        H = np.einsum("nmi,m,nmj->ij", J, w, J) / len(windows)
    else:
        raise ValueError(f"unknown Hessian method {method!r}")
    if scalar:
        H = H / sigma2
    H = 0.5 * (H + H.T)
    factor, eps = _factor(H, jitter_start, jitter_max)
    return HessianBlock(H, coords, eps, factor)


@dataclass
class IntervalReport:
    center: np.ndarray  # (N, m)
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    sigma2_hat: object  # float or (m,)
    varsigma2_hat: np.ndarray  # (N, m); NaN where not applicable
    method: str = "delta"
    warnings: list = field(default_factory=list)

    def __len__(self):
        return self.center.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def rescale(self, mean: float, sd: float) -> "IntervalReport":
        """Map a report from standardised units back to data units."""
        return IntervalReport(
            self.center * sd + mean,
            self.lower * sd + mean,
            self.upper * sd + mean,
            self.alpha,
            np.asarray(self.sigma2_hat) * sd * sd,
            self.varsigma2_hat * sd * sd,
            self.method,
            list(self.warnings),
        )

    def to_csv(self, path) -> None:
        m = self.center.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point_index", "horizon", "center", "lower", "upper"])
            for i in range(self.center.shape[0]):
                for j in range(m):
                    w.writerow(
                        [i, j + 1] + [format(float(a[i, j]), ".17g") for a in (self.center, self.lower, self.upper)]
                    )


def _z(p_upper: float) -> float:
    return normal_quantile(1.0 - p_upper)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def interval_one_step(
    net: Network,
    params,
    mask,
    train: Windows,
    test: Windows,
    alpha: float,
    hessian: HessianBlock | None = None,
    sigma2: float | None = None,
    **hessian_kw,
) -> IntervalReport:
    """Delta-method intervals for every window in ``test``."""
    _check_alpha(alpha)
    if net.spec.output_dim != 1:
        raise ValueError("one-step intervals need a scalar output; use intervals_multi_horizon")
    n = len(train)
    if sigma2 is None:
        sigma2 = estimate_sigma2(net, params, mask, train)
    if hessian is None:
        hessian = neg_hessian(net, params, mask, train, sigma2, **hessian_kw)
    center = net.predict(params, mask, test.inputs)
    g = net.output_gradients(params, mask, test.inputs)[:, 0, hessian.coords]
    vs = np.maximum(hessian.quad(g), 0.0)[:, None]
    half = _z(alpha / 2.0) * np.sqrt(vs / n + sigma2)
    return IntervalReport(center, center - half, center + half, alpha, float(sigma2), vs)


def intervals_multi_horizon(
    net: Network,
    params,
    mask,
    train: Windows,
    test: Windows,
    alpha: float,
    hessian: HessianBlock | None = None,
    **hessian_kw,
) -> IntervalReport:
    """Bonferroni joint intervals for an ``m``-output forecaster."""
    _check_alpha(alpha)
    m = net.spec.output_dim
    n = len(train)
    sigma2 = estimate_sigma2(net, params, mask, train, per_output=True)
    if hessian is None:
        hessian = neg_hessian(net, params, mask, train, sigma2 if m > 1 else float(sigma2[0]), **hessian_kw)
    center = net.predict(params, mask, test.inputs)
    J = net.output_gradients(params, mask, test.inputs)[:, :, hessian.coords]  # (N, m, k)
    N, _, k = J.shape
    vs = np.maximum(hessian.quad(J.reshape(N * m, k)).reshape(N, m), 0.0)
    half = _z(alpha / (2.0 * m)) * np.sqrt(vs / n + sigma2[None, :])
    return IntervalReport(center, center - half, center + half, alpha, sigma2, vs)


def split_conformal_baseline(
    cal_predictions,
    cal_targets,
    test_predictions,
    alpha: float,
    m: int | None = None,
) -> IntervalReport:
    """Symmetric intervals from per-horizon absolute calibration residuals.

    Each horizon uses the ``ceil((n_cal + 1)(1 - alpha/m))``-th smallest
    residual.  When that rank exceeds ``n_cal`` the intervals are infinite
    and a warning is recorded.
    """
    _check_alpha(alpha)
    cal_predictions = np.atleast_2d(np.asarray(cal_predictions, dtype=np.float64))
    cal_targets = np.atleast_2d(np.asarray(cal_targets, dtype=np.float64))
    test_predictions = np.atleast_2d(np.asarray(test_predictions, dtype=np.float64))
    if cal_predictions.shape != cal_targets.shape:
        raise DataError("calibration predictions and targets differ in shape")
    n_cal = cal_targets.shape[0]
    if n_cal == 0:
        raise DataError("empty calibration set")
    m = cal_targets.shape[1] if m is None else m
    resid = np.sort(np.abs(cal_targets - cal_predictions), axis=0)
    rank = math.ceil((n_cal + 1) * (1.0 - alpha / m) - 1e-12)
    notes = []
    if rank > n_cal:
        msg = f"conformal rank {rank} exceeds calibration size {n_cal}; intervals are infinite"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        half = np.full(resid.shape[1], np.inf)
    else:
        half = resid[rank - 1]
    center = test_predictions
    vs = np.full(center.shape, np.nan)
    return IntervalReport(center, center - half, center + half, alpha, float("nan"), vs, "conformal", notes)
