"""Mixture Gaussian (spike-and-slab style) prior and its annealing schedule.

Each weight has density ``lam * N(0, s1) + (1 - lam) * N(0, s0)`` with
variances ``s0 < s1``.  The narrow component pulls weights toward zero; the
threshold is the magnitude where both components are equally responsible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import ThresholdError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixturePrior:
    lambda_n: float
    sigma0_sq: float
    sigma1_sq: float

    def __post_init__(self):
        if not 0.0 < self.lambda_n < 1.0:
            raise ValueError(f"lambda_n must lie in (0, 1), got {self.lambda_n}")
        if not self.sigma0_sq > 0.0:
            raise ValueError("sigma0_sq must be positive")
        if not self.sigma1_sq > self.sigma0_sq:
            raise ValueError("sigma1_sq must exceed sigma0_sq")

    def with_sigma0(self, sigma0_sq: float) -> "MixturePrior":
        return replace(self, sigma0_sq=float(sigma0_sq))


def _log_components(beta, prior: MixturePrior):
    b2 = np.square(beta)
    l1 = math.log(prior.lambda_n) - 0.5 * (_LOG_2PI + math.log(prior.sigma1_sq)) - 0.5 * b2 / prior.sigma1_sq
    l0 = math.log1p(-prior.lambda_n) - 0.5 * (_LOG_2PI + math.log(prior.sigma0_sq)) - 0.5 * b2 / prior.sigma0_sq
    return l1, l0


def _as_finite(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta contains non-finite entries")
    return beta


def log_prior(beta, prior: MixturePrior) -> float:
    """Sum of per-weight log mixture densities."""
    beta = _as_finite(beta)
    l1, l0 = _log_components(beta, prior)
    return float(np.sum(np.logaddexp(l1, l0)))


def responsibility(beta, prior: MixturePrior) -> np.ndarray:
    """Posterior probability that each weight comes from the wide component."""
    l1, l0 = _log_components(np.asarray(beta, dtype=np.float64), prior)
    return expit(l1 - l0)


def grad_log_prior(beta, prior: MixturePrior) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    r = responsibility(beta, prior)
    return -beta * (r / prior.sigma1_sq + (1.0 - r) / prior.sigma0_sq)


def log_prior_and_grad(beta, prior: MixturePrior) -> tuple:
    """``(log_prior, grad_log_prior)`` sharing one pass over ``beta``."""
    beta = _as_finite(beta)
    l1, l0 = _log_components(beta, prior)
    d = l1 - l0
    value = float(np.sum(np.maximum(l1, l0)) + np.sum(np.log1p(np.exp(-np.abs(d)))))
    r = expit(d)
    return value, -beta * (r / prior.sigma1_sq + (1.0 - r) / prior.sigma0_sq)


def threshold(prior: MixturePrior) -> float:
    """Magnitude at which both mixture components are equally responsible."""
    s0, s1, lam = prior.sigma0_sq, prior.sigma1_sq, prior.lambda_n
    # log of ((1-lam)/lam) * sigma1/sigma0
    log_arg = math.log1p(-lam) - math.log(lam) + 0.5 * (math.log(s1) - math.log(s0))
    if log_arg <= 0.0:
        raise ThresholdError(
            f"no real threshold: (1-lambda)*sigma1 <= lambda*sigma0 for lambda={lam}, "
            f"sigma0_sq={s0}, sigma1_sq={s1}"
        )
    return math.sqrt(2.0 * s0 * s1 / (s1 - s0)) * math.sqrt(log_arg)


def predicted_sparsity(beta, prior: MixturePrior) -> float:
    """Fraction of entries that thresholding would prune."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.size == 0:
        raise ValueError("empty parameter vector")
    return float(np.mean(np.abs(beta) <= threshold(prior)))


@dataclass(frozen=True)
class AnnealSchedule:
    T1: int
    T2: int
    T3: int
    sigma0_init_sq: float
    sigma0_end_sq: float
    temp_const: float = 1.0
    base_temperature: float = 1.0

    def __post_init__(self):
        if not (0 <= self.T1 < self.T2 < self.T3):
            raise ValueError(f"need 0 <= T1 < T2 < T3, got {self.T1}, {self.T2}, {self.T3}")
        if not (self.sigma0_init_sq >= self.sigma0_end_sq > 0.0):
            raise ValueError("need sigma0_init_sq >= sigma0_end_sq > 0")
        if not self.temp_const > 0.0 or not self.base_temperature > 0.0:
            raise ValueError("temperatures must be positive")


@dataclass(frozen=True)
class SchedulePoint:
    phase: str  # "initial", "ramp", "shrink", "cool"
    eta: float
    sigma0_sq: float
    temperature: float

    def __iter__(self):
        return iter((self.eta, self.sigma0_sq, self.temperature))


def schedule_at(t: int, sched: AnnealSchedule) -> SchedulePoint:
    """Prior weight, spike variance and temperature at iteration ``t``.

    Before ``T1`` the prior is off (``eta = 0``) and training is plain
    optimisation; the returned temperature is 0 there.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    T1, T2, T3 = sched.T1, sched.T2, sched.T3
    if t < T1:
        return SchedulePoint("initial", 0.0, sched.sigma0_init_sq, 0.0)
    if t <= T2:
        return SchedulePoint("ramp", (t - T1) / (T2 - T1), sched.sigma0_init_sq, sched.base_temperature)
    if t <= T3:
        a = (T3 - t) / (T3 - T2)
        s0 = a * sched.sigma0_init_sq + (1.0 - a) * sched.sigma0_end_sq
        return SchedulePoint("shrink", 1.0, s0, sched.base_temperature)
    return SchedulePoint("cool", 1.0, sched.sigma0_end_sq, sched.temp_const / (t - T3))


@dataclass(frozen=True)
class Calibration:
    sigma0_init_sq: float
    sparsity: float
    converged: bool


def calibrate_sigma0_init(
    beta,
    template: MixturePrior,
    target_sparsity: float,
    tol: float = 0.01,
    max_iter: int = 200,
) -> Calibration:
    """Pick the spike variance whose threshold prunes ``target_sparsity`` of ``beta``.

    Bisects ``log(sigma0_sq)`` on ``[1e-12, sigma1_sq * (1 - 1e-6)]``.  When
    the target cannot be met within ``tol`` the closest value found is
    returned with ``converged=False`` and a warning is issued.
    """
    if not 0.0 < target_sparsity < 1.0:
        raise ValueError("target_sparsity must lie in (0, 1)")
    beta = _as_finite(beta)

    def sparsity(s0):
        try:
            return predicted_sparsity(beta, template.with_sigma0(s0))
        except ThresholdError:
            return 0.0

    lo, hi = math.log(1e-12), math.log(template.sigma1_sq * (1.0 - 1e-6))
    best_s0, best_sp = None, None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s0 = math.exp(mid)
        sp = sparsity(s0)
        if best_sp is None or abs(sp - target_sparsity) < abs(best_sp - target_sparsity):
            best_s0, best_sp = s0, sp
        if abs(sp - target_sparsity) <= tol:
            return Calibration(s0, sp, True)
        if sp < target_sparsity:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    for s0 in (math.exp(lo), math.exp(hi)):
        sp = sparsity(s0)
        if abs(sp - target_sparsity) < abs(best_sp - target_sparsity):
            best_s0, best_sp = s0, sp
    if abs(best_sp - target_sparsity) <= tol:
        return Calibration(best_s0, best_sp, True)
    warnings.warn(
        f"target sparsity {target_sparsity} unreachable; closest is {best_sp:.4f}",
        RuntimeWarning,
        stacklevel=2,
    )
    return Calibration(best_s0, best_sp, False)
