# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled circular convolution kernels.

Direct C loops over a circularly padded copy of the input, so the inner
loops are branch-free, contiguous in the fastest axis and expressed
through flat pointers the C compiler can vectorize.  Semantics are
identical to the numpy backend in qgclosure.convops (periodic
cross-correlation with odd kernels); padding keeps the working set at
O(c * (n + k)^2) instead of the k^2 shifted copies im2col needs.
"""

import numpy as np


cdef inline Py_ssize_t _mod(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t r = i % n
    if r < 0:
        r += n
    return r


cdef void _pad_circular(const double[:, :, ::1] x, double[:, :, ::1] xp,
                        Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t ch, i, j
    for ch in range(c):
        for i in range(n + 2 * pad):
            for j in range(n + 2 * pad):
                xp[ch, i, j] = x[ch, _mod(i - pad, n), _mod(j - pad, n)]


def forward(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
            const double[::1] b):
    """Bias plus periodic cross-correlation; mirrors the numpy backend."""
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t pad = k // 2, npad = n + 2 * pad
    xp_arr = np.empty((c, npad, npad), dtype=np.float64)
    cdef double[:, :, ::1] xp = xp_arr
    y_arr = np.empty((o, n, n), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t oc, ic, dp, dq, i, j, idx
    cdef double wv, bias
    cdef double * yp
    cdef double * yrow
    cdef const double * xrow
    with nogil:
        _pad_circular(x, xp, pad)
        for oc in range(o):
            yp = &y[oc, 0, 0]
            bias = b[oc]
            for idx in range(n * n):
                yp[idx] = bias
            for ic in range(c):
                for dp in range(k):
                    for dq in range(k):
                        wv = w[oc, ic, dp, dq]
                        for i in range(n):
                            yrow = yp + i * n
                            xrow = &xp[ic, i + dp, dq]
                            for j in range(n):
                                yrow[j] += wv * xrow[j]
    return y_arr


def backward_input(const double[:, :, ::1] gy, const double[:, :, :, ::1] w):
    """Adjoint of forward() in the input: scatter into a padded buffer, fold."""
    cdef Py_ssize_t o = gy.shape[0], n = gy.shape[1]
    cdef Py_ssize_t c = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t pad = k // 2, npad = n + 2 * pad
    gp_arr = np.zeros((c, npad, npad), dtype=np.float64)
    cdef double[:, :, ::1] gp = gp_arr
    gx_arr = np.zeros((c, n, n), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t oc, ic, dp, dq, i, j
    cdef double wv
    cdef double * gprow
    cdef const double * gyrow
    with nogil:
        for ic in range(c):
            for oc in range(o):
                for dp in range(k):
                    for dq in range(k):
                        wv = w[oc, ic, dp, dq]
                        for i in range(n):
                            gprow = &gp[ic, i + dp, dq]
                            gyrow = &gy[oc, i, 0]
                            for j in range(n):
                                gprow[j] += wv * gyrow[j]
        for ic in range(c):
            for i in range(npad):
                for j in range(npad):
                    gx[ic, _mod(i - pad, n), _mod(j - pad, n)] += gp[ic, i, j]
    return gx_arr


def backward_weights(const double[:, :, ::1] x, const double[:, :, ::1] gy,
                     Py_ssize_t k):
    """Adjoint of forward() in the weights.

    The inner accumulation runs per output column into a lane buffer
    (independent elements vectorize under strict IEEE, a plain scalar
    reduction would not) and collapses to the final dot product last.
    """
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t o = gy.shape[0]
    cdef Py_ssize_t pad = k // 2, npad = n + 2 * pad
    xp_arr = np.empty((c, npad, npad), dtype=np.float64)
    cdef double[:, :, ::1] xp = xp_arr
    gw_arr = np.zeros((o, c, k, k), dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    lanes_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] lanes = lanes_arr
    cdef Py_ssize_t oc, ic, dp, dq, i, j, i4
    cdef double acc
    cdef const double * g0
    cdef const double * g1
    cdef const double * g2
    cdef const double * g3
    cdef const double * x0
    cdef const double * x1
    cdef const double * x2
    cdef const double * x3
    cdef double * lp
    with nogil:
        _pad_circular(x, xp, pad)
        lp = &lanes[0]
        i4 = n - n % 4
        for oc in range(o):
            for ic in range(c):
                for dp in range(k):
                    for dq in range(k):
                        for j in range(n):
                            lp[j] = 0.0
                        for i in range(0, i4, 4):
                            g0 = &gy[oc, i, 0]
                            g1 = &gy[oc, i + 1, 0]
                            g2 = &gy[oc, i + 2, 0]
                            g3 = &gy[oc, i + 3, 0]
                            x0 = &xp[ic, i + dp, dq]
                            x1 = &xp[ic, i + 1 + dp, dq]
                            x2 = &xp[ic, i + 2 + dp, dq]
                            x3 = &xp[ic, i + 3 + dp, dq]
                            for j in range(n):
                                lp[j] += (g0[j] * x0[j] + g1[j] * x1[j]
                                          + g2[j] * x2[j] + g3[j] * x3[j])
                        for i in range(i4, n):
                            g0 = &gy[oc, i, 0]
                            x0 = &xp[ic, i + dp, dq]
                            for j in range(n):
                                lp[j] += g0[j] * x0[j]
                        acc = 0.0
                        for j in range(n):
                            acc += lp[j]
                        gw[oc, ic, dp, dq] = acc
    return gw_arr
