"""Pure-numpy im2col / col2im kernels.

Fallback backend used when the compiled extension is unavailable (or when
``M2D_NO_EXT=1``).  Loops run over the kernel footprint only, so the cost per
call is k*k strided copies; the heavy lifting stays inside BLAS matmuls in the
conv layers.
"""

import numpy as np

name = "numpy"


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """Gather conv patches from a padded NCHW input.

    Returns an array of shape [N, C*kh*kw, ho*wo].
    """
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(
    cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int
) -> np.ndarray:
    """Scatter-add conv patches back onto a padded NCHW canvas.

    Adjoint of :func:`im2col`; overlapping patches accumulate.
    """
    n = cols.shape[0]
    cols6 = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols6[:, :, i, j]
    return xp
