# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Each routine mirrors a fallback in ``widr.kernels``
and accumulates in the same order, so both backends agree bit for bit."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    out_arr = np.zeros((n * oh * ow, c * k * k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ch, ki, kj, row, col, yy, xx
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                row = (b * oh + i) * ow + j
                col = 0
                for ch in range(c):
                    for ki in range(k):
                        yy = i * stride + ki - pad
                        for kj in range(k):
                            xx = j * stride + kj - pad
                            if 0 <= yy < h and 0 <= xx < w:
                                out[row, col] = x[b, ch, yy, xx]
                            col += 1
    return out_arr


def col2im(const double[:, ::1] cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h,
           Py_ssize_t w, int k, int stride, int pad):
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ch, ki, kj, yy, xx, row, col
    for b in range(n):
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    col = (ch * k + ki) * k + kj
                    for i in range(oh):
                        yy = i * stride + ki - pad
                        if yy < 0 or yy >= h:
                            continue
                        for j in range(ow):
                            xx = j * stride + kj - pad
                            if xx < 0 or xx >= w:
                                continue
                            row = (b * oh + i) * ow + j
                            out[b, ch, yy, xx] += cols[row, col]
    return out_arr


def assign_nearest(const double[:, ::1] x, const double[:, ::1] centroids):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], k = centroids.shape[0]
    labels_arr = np.zeros(n, dtype=np.int64)
    dist_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, j, d
    cdef double acc, diff, best
    cdef cnp.int64_t best_j
    for i in range(n):
        best = 0.0
        best_j = -1
        for j in range(k):
            acc = 0.0
            for d in range(m):
                diff = x[i, d] - centroids[j, d]
                acc = acc + diff * diff
            if best_j < 0 or acc < best:
                best = acc
                best_j = j
        labels[i] = best_j
        dist[i] = best
    return labels_arr, dist_arr


def vlad_accumulate(const double[:, ::1] x, const double[:, ::1] centroids,
                    const cnp.int64_t[::1] labels):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], k = centroids.shape[0]
    out_arr = np.zeros((k, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, d, j
    for i in range(n):
        j = labels[i]
        for d in range(m):
            out[j, d] += x[i, d] - centroids[j, d]
    return out_arr
