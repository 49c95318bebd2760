"""Optimizers operating in place on :class:`Parameter` lists."""

from __future__ import annotations

import numpy as np


class SGD:
    """SGD with momentum and L2 weight decay folded into the gradient."""

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, skip=frozenset()) -> None:
        for p in self.params:
            if p.name in skip:
                continue
            g = p.grad + self.weight_decay * p.value
            v = self.velocity[p.name]
            v *= self.momentum
            v += g
            p.value -= self.lr * v

    def state(self) -> dict[str, np.ndarray]:
        return {f"sgd.{k}": v for k, v in self.velocity.items()}


class AdamW:
    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, skip=frozenset()) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            if p.name in skip:
                continue
            m, v = self.m[p.name], self.v[p.name]
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            p.value -= self.lr * (m / c1 / (np.sqrt(v / c2) + self.eps)
                                  + self.weight_decay * p.value)
