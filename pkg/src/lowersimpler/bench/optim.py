from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import Tensor
from ..errors import NonFiniteError


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in parameter {i}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params:
            p.grad.fill(0.0)

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, self.beta1, self.beta2, self.eps)
