"""Optimisers and the prior-annealing training pipeline.

Energy for a minibatch ``B`` out of ``n`` training windows::

    U(beta) = (n / |B|) * 0.5 * sum_B ||y - mu||^2  -  eta * log pi(beta)

i.e. the unit-variance Gaussian negative log-likelihood scaled to the full
data, plus the tempered prior.  ``TrainConfig.learning_rate`` is stated per
observation: updates on ``U`` use ``learning_rate / n`` so that the step on
the data term matches plain SGD on the mean squared error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Windows
from .errors import DivergenceError
from .models import Network
from .prior import (
    AnnealSchedule,
    MixturePrior,
    calibrate_sigma0_init,
    log_prior_and_grad,
    schedule_at,
    threshold,
)
from .rng import gaussian, stream


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    momentum: float = 0.9
    batch_size: int = 36
    total_iterations: int = 1000
    seed: int = 0
    gradient_clip: float | None = None
    refine_iterations: int = 0
    refine_learning_rate: float | None = None
    log_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_iterations < 0 or self.refine_iterations < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.gradient_clip is not None and not self.gradient_clip > 0:
            raise ValueError("gradient_clip must be positive when set")


@dataclass
class OptimState:
    velocity: np.ndarray
    step: int = 0
    rng: np.random.Generator | None = None

    @classmethod
    def fresh(cls, n_params: int, seed: int, tag: str = "sghmc") -> "OptimState":
        return cls(np.zeros(n_params), 0, stream(seed, "train", tag))


# -- energy -----------------------------------------------------------------------


def data_loss_and_grad(net: Network, params, mask, batch: Windows) -> tuple:
    """``0.5 * sum ||y - mu||^2`` over the batch and its gradient."""
    trace = net.build(batch.inputs)
    tape = trace.tape
    resid = tape.sub(trace.outputs[-1], tape.const(batch.targets))
    total = tape.scale(tape.sum(tape.square(resid)), 0.5)
    value = tape.forward(net.bindings(params, mask), output=total)
    return value, net.gather(tape.backward(), mask)


def loss_and_grad(
    net: Network,
    params,
    mask,
    batch: Windows,
    eta: float,
    prior: MixturePrior | None,
    n_total: int | None = None,
    iteration: int | None = None,
) -> tuple:
    """Energy ``U`` and its gradient (see module docstring)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    n_total = len(batch) if n_total is None else n_total
    scale = n_total / len(batch)
    sse, g = data_loss_and_grad(net, params, mask, batch)
    U = scale * sse
    grad = scale * g
    if eta != 0.0 and prior is not None:
        eff = np.asarray(params) * mask
        lp, glp = log_prior_and_grad(eff, prior)
        U -= eta * lp
        grad = grad - eta * glp * mask
    if not (math.isfinite(U) and np.all(np.isfinite(grad))):
        raise DivergenceError(f"non-finite energy at iteration {iteration}", iteration=iteration)
    return U, grad


# -- optimisers ---------------------------------------------------------------------


def _clip(grad, clip):
    if clip is None:
        return grad
    norm = float(np.linalg.norm(grad))
    return grad * (clip / norm) if norm > clip else grad


def sgd_momentum_step(params, grad, state: OptimState, cfg: TrainConfig, lr: float | None = None):
    """``v <- momentum*v - lr*grad; beta <- beta + v``."""
    lr = cfg.learning_rate if lr is None else lr
    state.velocity = cfg.momentum * state.velocity - lr * grad
    state.step += 1
    return params + state.velocity, state


def sghmc_step(params, grad, state: OptimState, cfg: TrainConfig, temperature: float, lr: float | None = None):
    """SGD-momentum plus Gaussian noise of variance ``2 * (1 - momentum) * temperature * lr``.

    At zero temperature no random numbers are drawn and the step coincides
    with :func:`sgd_momentum_step`.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    lr = cfg.learning_rate if lr is None else lr
    v = cfg.momentum * state.velocity - lr * grad
    if temperature > 0:
        sd = math.sqrt(2.0 * (1.0 - cfg.momentum) * temperature * lr)
        v = v + sd * gaussian(state.rng, v.shape)
    state.velocity = v
    state.step += 1
    return params + v, state


# -- pipeline --------------------------------------------------------------------


class BatchSampler:
    """Minibatches drawn without replacement within each pass over the data."""

    def __init__(self, n: int, batch_size: int, seed: int, tag: str = "batches"):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = stream(seed, "train", tag)
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        rows = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return rows


@dataclass
class AnnealResult:
    params: np.ndarray
    prior_end: MixturePrior
    schedule: AnnealSchedule
    log: list = field(default_factory=list)
    calibrated: object = None


def _emit(log, sink, record):
    log.append(record)
    if sink is not None:
        sink.write(json.dumps(record) + "\n")


def mean_squared_error(net: Network, params, mask, windows: Windows) -> float:
    pred = net.predict(params, mask, windows.inputs)
    return float(np.mean(np.sum((windows.targets - pred) ** 2, axis=1)))


def run_prior_annealing(
    net: Network,
    windows: Windows,
    prior: MixturePrior,
    sched: AnnealSchedule,
    cfg: TrainConfig,
    params=None,
    target_sparsity: float | None = None,
    log_sink=None,
) -> AnnealResult:
    """Initial SGD training, then SGHMC under the annealed prior.

    ``prior`` supplies ``lambda_n`` and ``sigma1_sq``; its spike variance is
    replaced every step by the schedule's.  When ``target_sparsity`` is given,
    the spike variance at ``T1`` is recalibrated so that thresholding the
    current weights would prune that fraction (never below ``sigma0_end_sq``).
    """
    if sched.T1 > cfg.total_iterations:
        raise ValueError("T1 exceeds total_iterations")
    n = len(windows)
    if n == 0:
        raise ValueError("no training windows")
    if params is None:
        params = net.init_params(stream(cfg.seed, "train", "init"))
    params = np.array(params, dtype=np.float64)
    mask = np.ones(net.n_params)
    state = OptimState.fresh(net.n_params, cfg.seed)
    sampler = BatchSampler(n, cfg.batch_size, cfg.seed)
    lr = cfg.learning_rate / n
    log, calibrated = [], None

    for t in range(cfg.total_iterations):
        if t == sched.T1 and target_sparsity is not None:
            calibrated = calibrate_sigma0_init(params, prior, target_sparsity)
            s0 = max(calibrated.sigma0_init_sq, sched.sigma0_end_sq)
            sched = replace(sched, sigma0_init_sq=s0)
        pt = schedule_at(t, sched)
        cur = prior.with_sigma0(pt.sigma0_sq)
        batch = windows.take(sampler.next())
        try:
            U, grad = loss_and_grad(net, params, mask, batch, pt.eta, cur, n_total=n, iteration=t)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), iteration=t, last_params=params.copy()) from None
        if cfg.gradient_clip is not None:
            grad = n * _clip(grad / n, cfg.gradient_clip)
        if pt.phase == "initial":
            new, state = sgd_momentum_step(params, grad, state, cfg, lr=lr)
        else:
            new, state = sghmc_step(params, grad, state, cfg, pt.temperature, lr=lr)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"non-finite parameters at iteration {t}", iteration=t, last_params=params.copy())
        params = new
        if cfg.log_every and (t % cfg.log_every == 0 or t == cfg.total_iterations - 1):
            _emit(
                log,
                log_sink,
                {
                    "iter": t,
                    "phase": pt.phase,
                    "loss": U / n,
                    "eta": pt.eta,
                    "sigma0_sq": pt.sigma0_sq,
                    "temperature": pt.temperature,
                },
            )
    end = schedule_at(cfg.total_iterations, sched) if cfg.total_iterations > sched.T1 else None
    prior_end = prior.with_sigma0(end.sigma0_sq if end is not None else sched.sigma0_end_sq)
    return AnnealResult(params, prior_end, sched, log, calibrated)


def sparsify(params, prior_end: MixturePrior) -> tuple:
    """Mask keeping ``|beta| > threshold``; returns ``(mask, kept_fraction)``."""
    params = np.asarray(params, dtype=np.float64)
    mask = (np.abs(params) > threshold(prior_end)).astype(np.float64)
    return mask, float(mask.mean()) if mask.size else 0.0


def refine(
    net: Network,
    params,
    mask,
    windows: Windows,
    cfg: TrainConfig,
    iterations: int | None = None,
    eval_every: int = 100,
    log_sink=None,
) -> np.ndarray:
    """Masked SGD-momentum on the data term alone.

    Masked coordinates are zeroed on entry and stay exactly zero.  The full
    training error is checked every ``eval_every`` steps and the best
    iterate seen (including the starting point) is returned.
    """
    mask = np.asarray(mask, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64) * mask
    iterations = cfg.refine_iterations if iterations is None else iterations
    if iterations == 0 or not mask.any():
        return params
    n = len(windows)
    lr = (cfg.refine_learning_rate or cfg.learning_rate) / n
    state = OptimState.fresh(net.n_params, cfg.seed, tag="refine")
    sampler = BatchSampler(n, cfg.batch_size, cfg.seed, tag="refine_batches")
    best, best_err = params.copy(), mean_squared_error(net, params, mask, windows)
    for t in range(iterations):
        batch = windows.take(sampler.next())
        try:
            _, grad = loss_and_grad(net, params, mask, batch, 0.0, None, n_total=n, iteration=t)
        except DivergenceError:
            break
        if cfg.gradient_clip is not None:
            grad = n * _clip(grad / n, cfg.gradient_clip)
        params, state = sgd_momentum_step(params, grad * mask, state, cfg, lr=lr)
        params = params * mask
        if (t + 1) % eval_every == 0 or t == iterations - 1:
            err = mean_squared_error(net, params, mask, windows)
            if log_sink is not None:
                log_sink.write(json.dumps({"iter": t, "phase": "refine", "loss": err}) + "\n")
            if not math.isfinite(err):
                break
            if err < best_err:
                best, best_err = params.copy(), err
    return best
