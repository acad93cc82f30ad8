# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mixture kernels. Same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


cdef void _logp_row(const double[:, ::1] x, Py_ssize_t i, double sa, double alpha,
                    const double[::1] log_w, const double[:, ::1] means,
                    const double[::1] var, double[::1] logp) noexcept nogil:
    cdef Py_ssize_t K = means.shape[0], d = means.shape[1], k, j
    cdef double q, diff
    for k in range(K):
        q = 0.0
        for j in range(d):
            diff = x[i, j] - sa * means[k, j]
            q += diff * diff
        logp[k] = log_w[k] - 0.5 * q / var[k] - 0.5 * d * (LOG_2PI + log(var[k]))


def mixture_eps(const double[:, ::1] x, double alpha, const double[::1] log_w,
                const double[:, ::1] means, const double[::1] scales):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], K = means.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double sa = sqrt(alpha), sn = sqrt(1.0 - alpha), m, total, rk
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] var = np.empty(K, dtype=np.float64)
    cdef double[::1] logp = np.empty(K, dtype=np.float64)
    for k in range(K):
        var[k] = alpha * scales[k] * scales[k] + (1.0 - alpha)
    with nogil:
        for i in range(n):
            _logp_row(x, i, sa, alpha, log_w, means, var, logp)
            m = logp[0]
            for k in range(1, K):
                if logp[k] > m:
                    m = logp[k]
            total = 0.0
            for k in range(K):
                logp[k] = exp(logp[k] - m)
                total += logp[k]
            for k in range(K):
                rk = logp[k] / total / var[k]
                for j in range(d):
                    out[i, j] += rk * (x[i, j] - sa * means[k, j])
            for j in range(d):
                out[i, j] *= sn
    return out_arr


def mixture_logpdf(const double[:, ::1] x, double alpha, const double[::1] log_w,
                   const double[:, ::1] means, const double[::1] scales):
    cdef Py_ssize_t n = x.shape[0], K = means.shape[0], i, k
    cdef double sa = sqrt(alpha), m, total
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] var = np.empty(K, dtype=np.float64)
    cdef double[::1] logp = np.empty(K, dtype=np.float64)
    for k in range(K):
        var[k] = alpha * scales[k] * scales[k] + (1.0 - alpha)
    with nogil:
        for i in range(n):
            _logp_row(x, i, sa, alpha, log_w, means, var, logp)
            m = logp[0]
            for k in range(1, K):
                if logp[k] > m:
                    m = logp[k]
            total = 0.0
            for k in range(K):
                total += exp(logp[k] - m)
            out[i] = m + log(total)
    return out_arr
