# cython: language_level=3
"""Compiled path kernels; same contracts as ``_kernels_py``.

The fused kernel never materializes the (b, N, d) path array: each path is
advanced one grid point at a time and only its summaries are kept.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def ar1_paths(const double[:, :, ::1] z, const double[:, ::1] trans, const double[:, ::1] chol):
    cdef Py_ssize_t b = z.shape[0], N = z.shape[1], d = z.shape[2]
    out_arr = np.empty((b, N, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] x = np.zeros(d), xn = np.zeros(d)
    cdef Py_ssize_t p, j, i, k
    cdef double acc
    with nogil:
        for p in range(b):
            for i in range(d):
                acc = 0.0
                for k in range(i + 1):
                    acc = acc + chol[i, k] * z[p, 0, k]
                x[i] = acc
                out[p, 0, i] = acc
            for j in range(1, N):
                for i in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc = acc + trans[i, k] * x[k]
                    for k in range(i + 1):
                        acc = acc + chol[i, k] * z[p, j, k]
                    xn[i] = acc
                for i in range(d):
                    x[i] = xn[i]
                    out[p, j, i] = xn[i]
    return out_arr


def gauge_max_quadratic(const double[:, :, ::1] paths, const double[:, ::1] shift, const double[:, ::1] gmat):
    cdef Py_ssize_t b = paths.shape[0], N = paths.shape[1], d = paths.shape[2]
    gamma_arr = np.empty(b, dtype=np.float64)
    jstar_arr = np.empty(b, dtype=np.int64)
    cdef double[::1] gamma = gamma_arr
    cdef cnp.int64_t[::1] jstar = jstar_arr
    cdef double[::1] kv = np.zeros(d)
    cdef Py_ssize_t p, j, i, k, best_j
    cdef double val, best, row
    with nogil:
        for p in range(b):
            best = -1e308
            best_j = 0
            for j in range(N):
                for i in range(d):
                    kv[i] = paths[p, j, i] + shift[j, i]
                val = 0.0
                for i in range(d):
                    row = 0.0
                    for k in range(d):
                        row = row + gmat[i, k] * kv[k]
                    val = val + kv[i] * row
                if val > best:
                    best = val
                    best_j = j
            gamma[p] = best
            jstar[p] = best_j + 1
    return gamma_arr, jstar_arr


def ar1_fused(const double[:, :, ::1] z, const double[:, ::1] trans, const double[:, ::1] chol,
              const double[:, ::1] shift, const double[:, ::1] gmat, const double[:, :, ::1] lin):
    cdef Py_ssize_t b = z.shape[0], N = z.shape[1], d = z.shape[2], nq = lin.shape[0]
    gamma_arr = np.empty(b, dtype=np.float64)
    jstar_arr = np.empty(b, dtype=np.int64)
    kstar_arr = np.empty((b, d), dtype=np.float64)
    hT_arr = np.empty((b, d), dtype=np.float64)
    lin_arr = np.zeros((b, nq), dtype=np.float64)
    cdef double[::1] gamma = gamma_arr
    cdef cnp.int64_t[::1] jstar = jstar_arr
    cdef double[:, ::1] kstar = kstar_arr
    cdef double[:, ::1] hT = hT_arr
    cdef double[:, ::1] lin_out = lin_arr
    cdef double[::1] x = np.zeros(d), xn = np.zeros(d), kv = np.zeros(d)
    cdef Py_ssize_t p, j, i, k, q, best_j
    cdef double acc, val, best, row
    with nogil:
        for p in range(b):
            best = -1e308
            best_j = 0
            for j in range(N):
                for i in range(d):
                    acc = 0.0
                    if j > 0:
                        for k in range(d):
                            acc = acc + trans[i, k] * x[k]
                    for k in range(i + 1):
                        acc = acc + chol[i, k] * z[p, j, k]
                    xn[i] = acc
                for i in range(d):
                    x[i] = xn[i]
                    kv[i] = xn[i] + shift[j, i]
                val = 0.0
                for i in range(d):
                    row = 0.0
                    for k in range(d):
                        row = row + gmat[i, k] * kv[k]
                    val = val + kv[i] * row
                if val > best:
                    best = val
                    best_j = j
                    for i in range(d):
                        kstar[p, i] = kv[i]
                for q in range(nq):
                    acc = 0.0
                    for i in range(d):
                        acc = acc + lin[q, j, i] * x[i]
                    lin_out[p, q] = lin_out[p, q] + acc
            gamma[p] = best
            jstar[p] = best_j + 1
            for i in range(d):
                hT[p, i] = x[i]
    return gamma_arr, jstar_arr, kstar_arr, hT_arr, lin_arr
