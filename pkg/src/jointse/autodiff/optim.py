"""Adam and global-norm gradient clipping."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError, NumericError
from .tensor import is_debug


class Adam:
    """Bias-corrected Adam over a fixed, ordered list of parameters.

    Gradients are passed explicitly to :meth:`step` so callers can combine
    several backward passes before updating (see the dual-channel step).
    """

    def __init__(self, params, lr=0.002, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None, lr=None):
        if grads is None:
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise InvalidInputError("one gradient per parameter is required")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if is_debug() and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {p.name}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        out = {}
        for i, p in enumerate(self.params):
            key = p.name or str(i)
            out[f"adam.m.{key}"] = self.m[i]
            out[f"adam.v.{key}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays, step_count):
        for i, p in enumerate(self.params):
            key = p.name or str(i)
            self.m[i] = np.array(arrays[f"adam.m.{key}"], dtype=p.dtype)
            self.v[i] = np.array(arrays[f"adam.v.{key}"], dtype=p.dtype)
        self.step_count = int(step_count)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm
