"""Plain SGD and Adam with an epoch-indexed hyperbolic learning-rate decay:
lr_e = learning_rate / (1 + decay * epoch)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 0.01
    decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.0  # SGD only

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")

    def effective_rate(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        return self.learning_rate / (1.0 + self.decay * epoch)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def for_params(params) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
        )


@dataclass
class SgdState:
    velocity: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params) -> "SgdState":
        return SgdState(velocity=[np.zeros_like(p, dtype=np.float64) for p in params])


def _check_aligned(params, grads) -> None:
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} does not match grad {g.shape}")


def sgd_step(params, grads, config: OptimizerConfig, epoch: int, state: SgdState | None = None):
    """In-place descent step. With the default momentum of zero this is plain
    gradient descent and ``state`` may be omitted."""
    _check_aligned(params, grads)
    lr = config.effective_rate(epoch)
    if config.momentum == 0.0:
        for p, g in zip(params, grads):
            p -= (lr * g).astype(p.dtype, copy=False)
        return state
    if state is None:
        state = SgdState.for_params(params)
    for p, g, vel in zip(params, grads, state.velocity):
        vel *= config.momentum
        vel -= lr * g
        p += vel.astype(p.dtype, copy=False)
    return state


def adam_step(params, grads, state: AdamState, config: OptimizerConfig, epoch: int) -> AdamState:
    """In-place bias-corrected Adam step; returns the advanced state."""
    _check_aligned(params, grads)
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    lr = config.effective_rate(epoch)
    state.t += 1
    bias1 = 1.0 - config.beta1**state.t
    bias2 = 1.0 - config.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * np.square(g)
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + config.epsilon)
        p -= update.astype(p.dtype, copy=False)
    return state


class Optimizer:
    """Stateful wrapper binding a config to a parameter list for train loops."""

    def __init__(self, params: list[np.ndarray], config: OptimizerConfig):
        self.params = params
        self.config = config
        self._adam = AdamState.for_params(params) if config.algorithm == "adam" else None
        self._sgd = (
            SgdState.for_params(params)
            if config.algorithm == "sgd" and config.momentum != 0.0
            else None
        )

    def step(self, grads, epoch: int) -> None:
        if self.config.algorithm == "adam":
            adam_step(self.params, grads, self._adam, self.config, epoch)
        else:
            self._sgd = sgd_step(self.params, grads, self.config, epoch, self._sgd)
