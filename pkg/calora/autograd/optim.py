"""Adam with decoupled weight decay."""

from typing import List, Sequence, Tuple

import numpy as np

from .tensor import Tensor


class AdamW:
    """
    AdamW over a fixed parameter list. ``weight_decay=0`` gives plain Adam.

    Parameter arrays are rebound, never written in place, so values captured
    by ``stop_gradient`` elsewhere stay valid.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * p.grad**2
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def Adam(params: Sequence[Tensor], lr: float = 1e-3, **kwargs) -> AdamW:
    return AdamW(params, lr=lr, weight_decay=0.0, **kwargs)
