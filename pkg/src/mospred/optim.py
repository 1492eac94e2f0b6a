"""Classical momentum SGD over named parameter dicts.

Update rule per tensor: v <- momentum * v + g; p <- p - lr * v.
Gradients are cast to the parameter dtype before entering the velocity, so
the recurrence is exact in whatever precision the parameters use.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np


class MomentumSGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            g = np.asarray(grads[name], dtype=p.dtype)
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p -= self.lr * v
