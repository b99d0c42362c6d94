"""Projected-gradient attacks: the regularized multi-proxy attack with validation
checkpointing, and a generic PGD over arbitrary output objectives."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .metrics import epsilon_for_target_snr, l2_radius_for_target_snr, snr_db
from .models.base import DifferentiableModel, ModelEvaluationError, ModelMode
from .targets import AttackTarget

log = logging.getLogger(__name__)


class Norm(str, Enum):
    LINF = "linf"
    L2 = "l2"


class StepRule(str, Enum):
    SGD = "sgd"
    NORMALIZED = "normalized"


class Schedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


@dataclass
class AttackConfig:
    """Attack hyperparameters; defaults follow the 10k-step LibriSpeech setting."""

    linf_radius: float = 0.015
    learning_rate: float = 5e-4
    iterations: int = 10000
    reg_const: float = 10.0
    norm: Norm = Norm.LINF
    l2_radius: float = 0.5
    checkpoint_every: int = 100
    seed: int = 0
    stochastic_proxy: bool = True
    # when set, the radius is derived per input so a saturating perturbation has this SNR
    snr_bound: float | None = None
    step_rule: StepRule = StepRule.SGD
    lr_schedule: Schedule = Schedule.CONSTANT
    clip_min: float = -1.0
    clip_max: float = 1.0

    def __post_init__(self):
        self.norm = Norm(self.norm)
        self.step_rule = StepRule(self.step_rule)
        self.lr_schedule = Schedule(self.lr_schedule)
        if self.linf_radius <= 0:
            raise ValueError("linf_radius must be > 0")
        if self.l2_radius <= 0:
            raise ValueError("l2_radius must be > 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.reg_const < 0:
            raise ValueError("reg_const must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.clip_min >= self.clip_max:
            raise ValueError("clip_min must be < clip_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norm"] = self.norm.value
        d["step_rule"] = self.step_rule.value
        d["lr_schedule"] = self.lr_schedule.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown attack config keys: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def radius_for(self, x) -> float:
        if self.snr_bound is None:
            return self.linf_radius if self.norm is Norm.LINF else self.l2_radius
        if self.norm is Norm.LINF:
            return epsilon_for_target_snr(x, self.snr_bound)
        return l2_radius_for_target_snr(x, self.snr_bound)


@dataclass
class PerturbationResult:
    delta: np.ndarray
    proxy_loss_trace: list[tuple[int, float]]
    validation_loss_trace: list[tuple[int, float]] = field(default_factory=list)
    best_iteration: int = 0
    achieved_snr: float = math.inf
    radius: float = 0.0
    final_delta: np.ndarray | None = None

    @property
    def best_validation_loss(self) -> float | None:
        return dict(self.validation_loss_trace).get(self.best_iteration)

    @property
    def final_validation_loss(self) -> float | None:
        return self.validation_loss_trace[-1][1] if self.validation_loss_trace else None


class AttackDivergedError(RuntimeError):
    def __init__(self, iteration: int, trace: list[tuple[int, float]]):
        super().__init__(f"non-finite loss at iteration {iteration}; last losses: {trace[-5:]}")
        self.iteration = iteration
        self.trace = trace


def linf_project(delta, eps: float) -> np.ndarray:
    return np.clip(delta, -eps, eps)


def l2_project(delta, radius: float, axis=None) -> np.ndarray:
    """Scale ``delta`` back onto the L2 ball; with ``axis`` set, each slice along it independently."""
    delta = np.asarray(delta, dtype=np.float64)
    if axis is None:
        norm = float(np.linalg.norm(delta))
        return delta if norm <= radius else delta * (radius / norm)
    flat = delta.reshape(delta.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return (flat * scale[:, None]).reshape(delta.shape)


def _project(delta, x, config: AttackConfig, radius, batched: bool):
    if config.norm is Norm.LINF:
        radius = np.asarray(radius)
        if batched and radius.ndim:
            radius = radius.reshape((-1,) + (1,) * (delta.ndim - 1))
        delta = np.clip(delta, -radius, radius)
    elif batched:
        flat = delta.reshape(delta.shape[0], -1)
        norms = np.linalg.norm(flat, axis=1)
        r = np.broadcast_to(np.asarray(radius, dtype=np.float64), norms.shape)
        scale = np.where(norms > r, r / np.maximum(norms, 1e-300), 1.0)
        delta = (flat * scale[:, None]).reshape(delta.shape)
    else:
        delta = l2_project(delta, float(radius))
    return np.clip(x + delta, config.clip_min, config.clip_max) - x


def step_size(config: AttackConfig, it: int) -> float:
    if config.lr_schedule is Schedule.CONSTANT:
        return config.learning_rate
    return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * it / config.iterations))


def _step(grad, config: AttackConfig, batched: bool, it: int = 0):
    lr = step_size(config, it)
    if config.step_rule is StepRule.SGD:
        return lr * grad
    if config.norm is Norm.LINF:
        return lr * np.sign(grad)
    if batched:
        flat = grad.reshape(grad.shape[0], -1)
        norms = np.maximum(np.linalg.norm(flat, axis=1), 1e-300)
        return lr * (flat / norms[:, None]).reshape(grad.shape)
    return lr * grad / max(float(np.linalg.norm(grad)), 1e-300)


def ensemble_loss_and_gradient(proxies: Sequence[DifferentiableModel], x, target) -> tuple[float, np.ndarray]:
    if not proxies:
        raise ValueError("at least one proxy model is required")
    total, grad = 0.0, np.zeros_like(np.asarray(x, dtype=np.float64))
    for proxy in proxies:
        try:
            loss, g = proxy.loss_and_gradient(x, target)
        except ModelEvaluationError:
            raise
        except Exception as exc:
            raise ModelEvaluationError(proxy.name, exc) from exc
        if g is None:
            raise ModelEvaluationError(proxy.name, RuntimeError("input gradient unavailable"))
        total += loss
        grad += g
    return total, grad


def ensemble_loss(proxies: Sequence[DifferentiableModel], x, target) -> float:
    """Unweighted sum of every proxy's training loss on ``(x, target)``."""
    if not proxies:
        raise ValueError("at least one proxy model is required")
    total = 0.0
    for proxy in proxies:
        try:
            total += proxy.loss(x, target)
        except ModelEvaluationError:
            raise
        except Exception as exc:
            raise ModelEvaluationError(proxy.name, exc) from exc
    return total


class _ModeGuard:
    """Put models in a mode for the duration of an attack, then restore it."""

    def __init__(self, models, mode: ModelMode, seed: int):
        self.models = list(models)
        self.mode = mode
        self.seed = seed

    def __enter__(self):
        self.saved = [m.mode for m in self.models]
        for i, m in enumerate(self.models):
            m.set_mode(self.mode)
            m.reseed(self.seed + 7919 * i)
        return self

    def __exit__(self, *exc):
        for m, mode in zip(self.models, self.saved):
            m.set_mode(mode)


def _validation_loss(model: DifferentiableModel, x, target) -> float:
    saved = model.mode
    model.set_mode(ModelMode.DETERMINISTIC)
    try:
        return float(model.loss(x, target))
    except Exception as exc:
        raise ModelEvaluationError(model.name, exc) from exc
    finally:
        model.set_mode(saved)


def cw_attack(proxies: Sequence[DifferentiableModel], validation_proxy: DifferentiableModel | None,
              x, target: AttackTarget, config: AttackConfig,
              on_iterate: Callable[[int, np.ndarray], None] | None = None) -> PerturbationResult:
    """Minimize ``sum_p L_p(x + delta, target) + c * |delta|_2^2`` over the L-infinity ball.

    Plain gradient steps from ``delta = 0``; after each step the perturbation is
    projected onto the ball and ``x + delta`` is clipped to the valid signal
    range. Proxies run in stochastic mode (dropout active) when
    ``config.stochastic_proxy`` is set. Every ``checkpoint_every`` steps, and
    after the last one, the validation proxy's deterministic loss is recorded;
    the lowest-loss checkpoint is returned.
    """
    if config.norm is not Norm.LINF:
        raise ValueError("cw_attack uses the L-infinity ball; use pgd_attack for L2")
    if not proxies:
        raise ValueError("at least one proxy model is required")
    x = np.asarray(getattr(x, "waveform", x), dtype=np.float64)
    eps = config.radius_for(x)
    c = config.reg_const
    delta = np.zeros_like(x)
    best_delta, best_iter, best_val = delta.copy(), config.iterations, math.inf
    proxy_trace: list[tuple[int, float]] = []
    val_trace: list[tuple[int, float]] = []
    mode = ModelMode.STOCHASTIC if config.stochastic_proxy else ModelMode.DETERMINISTIC

    with _ModeGuard(proxies, mode, config.seed):
        for it in range(config.iterations):
            loss, grad = ensemble_loss_and_gradient(proxies, x + delta, target)
            if not math.isfinite(loss):
                raise AttackDivergedError(it, proxy_trace + [(it, loss)])
            proxy_trace.append((it, loss))
            grad = grad + 2.0 * c * delta
            delta = _project(delta - _step(grad, config, False, it), x, config, eps, False)
            if on_iterate is not None:
                on_iterate(it + 1, delta)
            done = it + 1
            if validation_proxy is not None and (done % config.checkpoint_every == 0 or done == config.iterations):
                val = _validation_loss(validation_proxy, x + delta, target)
                if not math.isfinite(val):
                    raise AttackDivergedError(done, val_trace + [(done, val)])
                val_trace.append((done, val))
                if val < best_val:
                    best_val, best_iter, best_delta = val, done, delta.copy()

    if validation_proxy is None:
        best_delta, best_iter = delta, config.iterations
    return PerturbationResult(
        delta=best_delta,
        proxy_loss_trace=proxy_trace,
        validation_loss_trace=val_trace,
        best_iteration=best_iter,
        achieved_snr=snr_db(x, best_delta) if np.any(x) else math.nan,
        radius=float(eps),
        final_delta=delta,
    )


def pgd_attack(model: DifferentiableModel, x, objective, config: AttackConfig, batched: bool = False,
               on_iterate: Callable[[int, np.ndarray], None] | None = None) -> PerturbationResult:
    """Minimize ``objective`` over the configured norm ball around ``x``.

    ``objective`` is either an AttackTarget (the model's own training loss is
    used) or a callable mapping the model's differentiable output to a scalar.
    With ``batched`` the first axis of ``x`` indexes independent inputs, each
    with its own ball; the objective should sum over them.
    """
    x = np.asarray(x, dtype=np.float64)
    if batched:
        radius = np.array([config.radius_for(xi) for xi in x])
    else:
        radius = config.radius_for(x)
    delta = np.zeros_like(x)
    trace: list[tuple[int, float]] = []
    mode = ModelMode.STOCHASTIC if config.stochastic_proxy else ModelMode.DETERMINISTIC

    if isinstance(objective, AttackTarget):
        def evaluate(inp):
            return model.loss_and_gradient(inp, objective)
    else:
        def evaluate(inp):
            return model.objective_and_gradient(inp, objective)

    with _ModeGuard([model], mode, config.seed):
        for it in range(config.iterations):
            loss, grad = evaluate(x + delta)
            if not math.isfinite(loss):
                raise AttackDivergedError(it, trace + [(it, loss)])
            trace.append((it, loss))
            delta = _project(delta - _step(grad, config, batched, it), x, config, radius, batched)
            if on_iterate is not None:
                on_iterate(it + 1, delta)

    snr = math.nan
    if not batched and np.any(x):
        snr = snr_db(x, delta)
    return PerturbationResult(
        delta=delta,
        proxy_loss_trace=trace,
        best_iteration=config.iterations,
        achieved_snr=snr,
        radius=float(np.mean(radius)),
        final_delta=delta,
    )
