from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from ..errors import ArgumentError, StateError
from .tensor import Tensor


class Parameter:
    """A named tensor with a frozen flag; frozen tensors never require grad."""

    def __init__(self, name: str, data: np.ndarray, frozen: bool = False):
        self.name = name
        self.tensor = Tensor(data, requires_grad=not frozen)
        self._frozen = bool(frozen)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.tensor.requires_grad = not self._frozen
        if self._frozen:
            self.tensor.grad = None

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape}, frozen={self.frozen})"


def cosine_lr(step: int, total_steps: int, lr_max: float, warmup_steps: int = 0) -> float:
    """Linear warmup followed by a half-cosine decay to zero at ``total_steps``.

    ``step`` is zero-based. The cosine phase starts at ``warmup_steps`` with
    ``lr_max`` and reaches 0 at ``step == total_steps``.
    """
    if total_steps <= 0:
        raise ArgumentError("total_steps must be positive")
    if step < warmup_steps:
        return lr_max * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0) / span, 1.0)
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


def warmup_steps_for(total_steps: int, fraction: float = 0.03) -> int:
    return int(round(total_steps * fraction))


@dataclass
class OptimizerState:
    lr_max: float
    total_steps: int
    warmup_steps: int = 0
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction, stepping only non-frozen parameters."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr_max: float,
        total_steps: int,
        warmup_steps: int = 0,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: List[Parameter] = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = OptimizerState(lr_max=lr_max, total_steps=total_steps, warmup_steps=warmup_steps)
        for p in self.params:
            if not p.frozen:
                self.state.first_moment[p.name] = np.zeros_like(p.data)
                self.state.second_moment[p.name] = np.zeros_like(p.data)

    def current_lr(self) -> float:
        s = self.state
        return cosine_lr(s.step, s.total_steps, s.lr_max, s.warmup_steps)

    def zero_grad(self) -> None:
        for p in self.params:
            if not p.frozen:
                p.tensor.zero_grad()

    def step(self) -> float:
        trainable = [p for p in self.params if not p.frozen]
        missing = [p.name for p in trainable if p.grad is None]
        if missing:
            raise StateError(f"no gradient for trainable parameters: {missing[:5]}")
        lr = self.current_lr()
        s = self.state
        t = s.step + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in trainable:
            if p.name not in s.first_moment:
                raise StateError(f"parameter {p.name} was frozen when the optimizer was built")
            g = p.grad
            m = s.first_moment[p.name]
            v = s.second_moment[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.tensor.data = (p.data - update).astype(p.data.dtype, copy=False)
        s.step = t
        return lr


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if not p.frozen and p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total
