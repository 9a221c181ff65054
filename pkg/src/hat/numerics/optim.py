from __future__ import annotations

import logging

import numpy as np

from .params import ParamStore

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay.

    Decay multiplies parameters by ``1 - lr * weight_decay`` before the
    moment update, so it never passes through the gradient moments.
    """

    def __init__(self, store: ParamStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in store}
        self.v = {k: np.zeros_like(p.data) for k, p in store}
        self.skipped = 0

    def step(self) -> bool:
        """Apply one update. Returns False (and leaves parameters alone) on a non-finite gradient."""
        for name, p in self.store:
            if not np.all(np.isfinite(p.grad)):
                self.skipped += 1
                log.warning("non-finite gradient in %s; step skipped", name)
                return False
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.store:
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.store.step += 1
        return True


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = store.grad_norm()
    if np.isfinite(norm) and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in store:
            p.grad *= scale
    return norm
