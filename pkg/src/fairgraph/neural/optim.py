"""Adam / SGD with L2 regularisation and a step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    l2: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    scheduler: str = "none"
    step_size: int = 50
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.scheduler not in ("none", "step_lr"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.step_size < 1:
            raise ValueError("step_size must be >= 1")

    def lr_at(self, epoch):
        """Learning rate in effect during 0-based ``epoch``."""
        if self.scheduler == "step_lr":
            return self.learning_rate * self.gamma ** (epoch // self.step_size)
        return self.learning_rate


class Optimizer:
    def __init__(self, params, state):
        self.params = params
        self.state = state
        self.epoch = 0
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in params}
        self._v = {n: np.zeros_like(p.data) for n, p in params} if state.kind == "adam" else None

    @property
    def lr(self):
        return self.state.lr_at(self.epoch)

    def end_epoch(self):
        self.epoch += 1

    def step(self):
        s = self.state
        lr = self.lr
        self.t += 1
        for name, p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
            if s.l2 and self.params.decays(name):
                g = g + s.l2 * p.data
            m = self._m[name]
            if s.kind == "sgd":
                if s.momentum:
                    m *= s.momentum
                    m += g
                    g = m
                p.data -= lr * g
                continue
            v = self._v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            m_hat = m / (1.0 - s.beta1**self.t)
            v_hat = v / (1.0 - s.beta2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + s.eps)
