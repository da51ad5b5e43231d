"""Scalar losses. Reductions accumulate in float64 regardless of storage dtype."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeMismatch, Tensor, from_op

BCE_CLAMP = 1e-7


def _target(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)


def l1_loss(pred: Tensor, target) -> Tensor:
    tgt = _target(target)
    if pred.data.shape != tgt.shape:
        raise ShapeMismatch(f"l1_loss: {pred.shape} vs {tgt.shape}")
    diff = pred.data.astype(np.float64) - tgt.astype(np.float64)
    val = np.array(np.abs(diff).mean(), dtype=np.float64)

    def bwd(out):
        def run():
            pred.accumulate_grad(float(out.grad) * np.sign(diff) / diff.size)

        return run

    return from_op(val, (pred,), bwd)


def bce_loss(probs: Tensor, target) -> Tensor:
    tgt = _target(target)
    if probs.data.shape != tgt.shape:
        raise ShapeMismatch(f"bce_loss: {probs.shape} vs {tgt.shape}")
    p = np.clip(probs.data.astype(np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = tgt.astype(np.float64)
    val = np.array(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean(), dtype=np.float64)

    def bwd(out):
        # clamped entries contribute no gradient
        live = (probs.data.astype(np.float64) > BCE_CLAMP) & (probs.data.astype(np.float64) < 1.0 - BCE_CLAMP)

        def run():
            g = (p - t) / (p * (1.0 - p)) / p.size
            probs.accumulate_grad(float(out.grad) * g * live)

        return run

    return from_op(val, (probs,), bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class.

    ``logits``: [N, K]; ``labels``: int vector [N] (a scalar label with 1-d
    logits is promoted to a batch of one).
    """
    z = logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or lab.ndim != 1 or z.shape[0] != lab.shape[0]:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs labels {lab.shape}")
    if lab.min() < 0 or lab.max() >= z.shape[1]:
        raise ValueError("cross_entropy: label out of range")
    n = z.shape[0]
    z64 = z.astype(np.float64)
    zmax = z64.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z64 - zmax).sum(axis=1)) + zmax[:, 0]
    val = np.array((lse - z64[np.arange(n), lab]).mean(), dtype=np.float64)

    def bwd(out):
        def run():
            sm = np.exp(z64 - lse[:, None])
            sm[np.arange(n), lab] -= 1.0
            g = float(out.grad) * sm / n
            logits.accumulate_grad(g.reshape(logits.data.shape))

        return run

    return from_op(val, (logits,), bwd)
