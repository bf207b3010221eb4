"""First-order adaptive-moment optimizer over diffcore tensors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with per-group learning rates.

    ``groups`` is a list of (tensors, lr) pairs; tensors without a gradient
    are skipped on each step.
    """

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [(list(ts), float(lr)) for ts, lr in groups]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def zero_grad(self):
        for tensors, _ in self.groups:
            for p in tensors:
                p.grad = None

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for tensors, lr in self.groups:
            for p in tensors:
                if p.grad is None:
                    continue
                key = id(p)
                m = self._m.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    self._m[key] = m
                    self._v[key] = np.zeros_like(p.data)
                v = self._v[key]
                g = p.grad
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p.data = p.data - lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
