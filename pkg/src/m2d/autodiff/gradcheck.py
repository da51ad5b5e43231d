"""Central-finite-difference validation of analytic gradients.

``f`` rebuilds its graph on every call and must be deterministic; the check
runs in float64 (float32 storage drowns an h=1e-4 difference in rounding
noise), so pass float64 parameters.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def grad_check(f, params: Sequence[Tensor], h: float = 1e-4, max_coords: int = 64, seed: int = 0) -> float:
    """Max relative error between analytic and numeric gradients.

    Samples up to ``max_coords`` coordinates per parameter tensor; relative
    error is |ga - gn| / max(1e-8, |ga| + |gn|).
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
    rng = np.random.default_rng(seed)

    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        ga_flat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_hi = float(f().data)
            flat[i] = orig - h
            f_lo = float(f().data)
            flat[i] = orig
            gn = (f_hi - f_lo) / (2.0 * h)
            err = abs(ga_flat[i] - gn) / max(1e-8, abs(ga_flat[i]) + abs(gn))
            if err > worst:
                worst = err
    return worst
