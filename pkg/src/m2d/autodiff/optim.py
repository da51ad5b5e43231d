"""SGD with momentum/weight decay, and bias-corrected Adam.

Both zero the gradients after applying a step, so a training loop is
forward / backward / step with no explicit zeroing.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import MissingGradient, Tensor


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, buf in zip(self.params, self.buffers):
            if p.grad is None:
                raise MissingGradient("SGD.step: parameter has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf *= self.momentum
            buf += g
            p.data -= (self.lr * buf).astype(p.data.dtype)
            p.grad = None

    def state_arrays(self, names: Sequence[str]) -> dict:
        out = {f"opt.sgd.buf.{n}": b for n, b in zip(names, self.buffers)}
        return out


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise MissingGradient("Adam.step: parameter has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / b1t
            vhat = v / b2t
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def state_arrays(self, names: Sequence[str]) -> dict:
        out = {}
        for n, m, v in zip(names, self.m, self.v):
            out[f"opt.adam.m.{n}"] = m
            out[f"opt.adam.v.{n}"] = v
        out["opt.adam.t"] = np.array([self.t], dtype=np.float32)
        return out
