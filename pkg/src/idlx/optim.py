"""Gradient-descent-with-adaptive-moments optimizer and LR schedules."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import UsageError


class Adam:
    """First/second-moment adaptive optimizer over a named parameter dict.

    ``weight_decay`` is decoupled (applied directly to the weights), so a
    nonzero value gives AdamW behavior. Parameters without gradients are
    skipped; buffers (requires_grad False) are never touched.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise UsageError("learning rate must be positive")
        self.params = {k: v for k, v in params.items() if v.requires_grad}
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self._v = {k: np.zeros_like(v.data) for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[name] = self.b1 * self._m[name] + (1 - self.b1) * p.grad
            v = self._v[name] = self.b2 * self._v[name] + (1 - self.b2) * p.grad**2
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params.values() if p.requires_grad and p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def warmup_constant_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup from zero, then flat. ``step`` counts from 1."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


def warmup_linear_decay_lr(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup then linear decay to zero at total_steps."""
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    remaining = max(0, total_steps - step)
    denom = max(1, total_steps - warmup_steps)
    return base_lr * remaining / denom
