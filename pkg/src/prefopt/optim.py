"""Minibatch training with RMSprop and gradient-norm clipping."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .datagen import Dataset
from .errors import ConfigurationError, TrainingDiverged
from .loss import METHODS, method_loss
from .metrics import MetricsReport, evaluate
from .policy import PolicyTable, check_compatible

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.1, 0.3, 0.5, 1.0)

# Large-model settings; tabular logits need far bigger steps than this.
LARGE_MODEL_PRESET = {"beta": 0.1, "learning_rate": 5e-7, "batch_size": 64}


@dataclass
class TrainConfig:
    method: str = "dpo"
    beta: float = 0.1
    lam: float = 0.0
    learning_rate: float = 1e-2
    batch_size: int = 64
    steps: int = 1000
    seed: int = 0
    grad_clip_norm: float | None = 1.0
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    detach_delta: bool = True

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.method in ("dpo", "ipo") and self.lam != 0:
            raise ConfigurationError(f"method {self.method} takes no lambda (got {self.lam})")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ConfigurationError("grad_clip_norm must be positive or None")
        if not 0 < self.rmsprop_decay < 1:
            raise ConfigurationError("rmsprop_decay must lie in (0, 1)")
        if not self.rmsprop_epsilon > 0:
            raise ConfigurationError("rmsprop_epsilon must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainState:
    step: int
    policy: PolicyTable
    rms_accumulator: np.ndarray
    rng_state: dict
    losses: list = field(default_factory=list)


def clip_gradient(gradient: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale ``gradient`` so its L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(gradient))
    if norm > max_norm:
        return gradient * (max_norm / norm)
    return gradient


def rmsprop_update(theta, accumulator, gradient, lr, decay=0.99, epsilon=1e-8):
    """One RMSprop step on arrays; returns new ``(theta, accumulator)``."""
    # overflow surfaces as non-finite parameters, which train() reports
    with np.errstate(over="ignore", invalid="ignore"):
        acc = decay * accumulator + (1.0 - decay) * gradient * gradient
        return theta - lr * gradient / (np.sqrt(acc) + epsilon), acc


def rmsprop_step(state: TrainState, gradient, lr, decay=0.99, epsilon=1e-8) -> TrainState:
    if gradient.shape != state.rms_accumulator.shape:
        raise ValueError(f"gradient shape {gradient.shape} != parameter shape {state.rms_accumulator.shape}")
    theta, acc = rmsprop_update(state.policy.logits, state.rms_accumulator, gradient, lr, decay, epsilon)
    state.policy.logits[...] = theta
    state.rms_accumulator = acc
    return state


class EpochSampler:
    """Draws minibatches from a fresh permutation each epoch.

    A batch that runs past the end of an epoch continues into the next one.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            if self._pos == self._order.size:
                self._order = self.rng.permutation(self.n)
                self._pos = 0
            take = min(need, self._order.size - self._pos)
            out.append(self._order[self._pos:self._pos + take])
            self._pos += take
            need -= take
        return np.concatenate(out)


Callback = Callable[[TrainState, MetricsReport], None]


def train(config: TrainConfig, dataset: Dataset, ref: PolicyTable,
          callbacks: Iterable[Callback] = (), eval_interval: int | None = None,
          init: PolicyTable | None = None) -> TrainState:
    """Run ``config.steps`` optimizer steps on ``dataset``.

    The trainable policy starts as a copy of ``ref`` unless ``init`` is
    given.  Callbacks receive the state and a :class:`MetricsReport` on
    the full dataset at step 0, every ``eval_interval`` steps and after the
    last step.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    start = ref if init is None else init
    check_compatible(start, ref)
    pi = start.copy(trainable=True)
    rng = np.random.default_rng(config.seed)
    state = TrainState(0, pi, np.zeros_like(pi.logits), rng.bit_generator.state)
    sampler = EpochSampler(len(dataset), config.batch_size, rng)
    callbacks = list(callbacks)

    def emit():
        if not callbacks:
            return
        full = method_loss(config.method, pi, ref, dataset, config.beta, config.lam, config.detach_delta)
        report = evaluate(pi, ref, dataset, step=state.step, loss=full.loss)
        for cb in callbacks:
            cb(state, report)

    emit()
    for t in range(1, config.steps + 1):
        idx = sampler.next()
        batch = [dataset.tuples[i] for i in idx]
        res = method_loss(config.method, pi, ref, batch, config.beta, config.lam, config.detach_delta)
        if not np.isfinite(res.loss):
            raise TrainingDiverged(t, idx, "loss")
        if not np.all(np.isfinite(res.gradient)):
            raise TrainingDiverged(t, idx, "gradient")
        g = res.gradient
        if config.grad_clip_norm is not None:
            g = clip_gradient(g, config.grad_clip_norm)
        rmsprop_step(state, g, config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon)
        if not np.all(np.isfinite(pi.logits)):
            raise TrainingDiverged(t, idx, "parameter")
        state.step = t
        state.losses.append(res.loss)
        state.rng_state = rng.bit_generator.state
        if eval_interval and (t % eval_interval == 0) and t != config.steps:
            emit()
        log.debug("step %d loss %.6g", t, res.loss)
    if config.steps > 0:
        emit()
    return state
