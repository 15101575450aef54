"""Adam with decoupled weight decay."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from byb.tensor import NumericError, Tensor


class Adam:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-4,
        weight_decay: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        for name, p in params.items():
            if not p.requires_grad:
                raise ValueError(f"{name} does not require grad and cannot be optimized")
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: Mapping[Tensor, np.ndarray] | None = None) -> None:
        """Update every parameter from ``grads`` (default: each tensor's ``.grad``)."""
        resolved = {}
        for name, p in self.params.items():
            g = p.grad if grads is None else grads.get(p)
            if g is None:
                raise ValueError(f"no gradient for {name}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {name}")
            resolved[name] = g

        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params.items():
            g = resolved[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()
