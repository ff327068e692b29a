"""Adaptive moment estimation optimizer (bias-corrected first and second
moments). A missing gradient counts as zero, so a step with no gradients
leaves parameters untouched at fresh state."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, freeze_prefixes=()):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.frozen = tuple(freeze_prefixes)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def _is_frozen(self, name: str) -> bool:
        return any(name.startswith(pref) for pref in self.frozen)

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            if self._is_frozen(name):
                continue
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None
