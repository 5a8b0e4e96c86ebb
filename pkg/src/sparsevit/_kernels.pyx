# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for float64 NCHW tensors.

Same contract and the same summation order as the numpy fallback in
``_kernels_py``, so both paths produce bit-identical results.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _first_valid(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    # smallest ox with ox*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _end_valid(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t w,
                                  Py_ssize_t wo) noexcept nogil:
    # one past the largest ox with ox*stride + off < w
    cdef Py_ssize_t e
    if w - off <= 0:
        return 0
    e = (w - off - 1) // stride + 1
    return e if e < wo else wo


def im2col(double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((b, c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t n, ch, i, j, oy, ox, iy, row, x0, x1
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        x0 = _first_valid(j - pad, stride)
                        x1 = _end_valid(j - pad, stride, w, wo)
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(x0, x1):
                                cols[n, row, oy * wo + ox] = x[n, ch, iy, ox * stride + j - pad]
    return out


def col2im(double[:, :, ::1] cols, shape, int k, int stride, int pad):
    cdef Py_ssize_t b = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t n, ch, i, j, oy, ox, iy, row, x0, x1
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        x0 = _first_valid(j - pad, stride)
                        x1 = _end_valid(j - pad, stride, w, wo)
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(x0, x1):
                                x[n, ch, iy, ox * stride + j - pad] += cols[n, row, oy * wo + ox]
    return out
