# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels (float32 / float64).

Same contract as m2d.kernels.numpy_backend; direct loops avoid the
intermediate strided copies of the numpy path.
"""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double

name = "compiled"


def im2col(xp, int kh, int kw, int sh, int sw, int ho, int wo):
    return _im2col(np.ascontiguousarray(xp), kh, kw, sh, sw, ho, wo)


def col2im(cols, int c, int hp, int wp, int kh, int kw, int sh, int sw, int ho, int wo):
    return _col2im(np.ascontiguousarray(cols), c, hp, wp, kh, kw, sh, sw, ho, wo)


def _im2col(real[:, :, :, ::1] xp, int kh, int kw, int sh, int sw, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0]
    cdef Py_ssize_t c = xp.shape[1]
    out_np = np.empty((n, c * kh * kw, ho * wo), dtype=np.asarray(xp).dtype)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t b, ch, i, j, y, x, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            for x in range(wo):
                                out[b, row, y * wo + x] = xp[b, ch, y * sh + i, x * sw + j]
    return out_np


def _col2im(real[:, :, ::1] cols, int c, int hp, int wp, int kh, int kw, int sh, int sw, int ho, int wo):
    cdef Py_ssize_t n = cols.shape[0]
    out_np = np.zeros((n, c, hp, wp), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, ch, i, j, y, x, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            for x in range(wo):
                                out[b, ch, y * sh + i, x * sw + j] += cols[b, row, y * wo + x]
    return out_np
