"""Gradient-descent optimization with adaptive moment estimates."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update tensors in `params` (name -> Tensor) from `grads`
        (node_id -> array); parameters without a gradient are skipped."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads.get(p.node_id)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(p.data.shape)
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            p.data = p.data - self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
