# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled layer kernels. Mirrors the contracts of _kernels_np exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def dense_forward(double[::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t out_len = w.shape[0]
    cdef Py_ssize_t in_len = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] z = np.empty(out_len, dtype=np.float64)
    cdef double[::1] zv = z
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(out_len):
        acc = b[i]
        for j in range(in_len):
            acc += w[i, j] * x[j]
        zv[i] = acc
    return z


def dense_backward(double[::1] x, double[:, ::1] w, double[::1] dz):
    cdef Py_ssize_t out_len = w.shape[0]
    cdef Py_ssize_t in_len = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] dw = np.empty((out_len, in_len), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] db = np.empty(out_len, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dx = np.zeros(in_len, dtype=np.float64)
    cdef double[:, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef double[::1] dxv = dx
    cdef Py_ssize_t i, j
    cdef double g
    for i in range(out_len):
        g = dz[i]
        dbv[i] = g
        for j in range(in_len):
            dwv[i, j] = g * x[j]
            dxv[j] += w[i, j] * g
    return dw, db, dx


def conv1d_forward(double[::1] x, double[::1] k, double[::1] b,
                   Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t out_len):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t ksz = k.shape[0]
    cdef cnp.ndarray[double, ndim=1] z = np.empty(out_len, dtype=np.float64)
    cdef double[::1] zv = z
    cdef double bias = b[0]
    cdef Py_ssize_t o, j, pos
    cdef double acc
    for o in range(out_len):
        acc = bias
        for j in range(ksz):
            pos = o * stride + j - padding
            if 0 <= pos < n:
                acc += k[j] * x[pos]
        zv[o] = acc
    return z


def conv1d_backward(double[::1] x, double[::1] k, double[::1] dz,
                    Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t ksz = k.shape[0]
    cdef Py_ssize_t out_len = dz.shape[0]
    cdef cnp.ndarray[double, ndim=1] dk = np.zeros(ksz, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] db = np.zeros(1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dx = np.zeros(n, dtype=np.float64)
    cdef double[::1] dkv = dk
    cdef double[::1] dxv = dx
    cdef Py_ssize_t o, j, pos
    cdef double g, acc
    cdef double bsum = 0.0
    # accumulate per-tap to match the numpy backend's summation order
    for j in range(ksz):
        acc = 0.0
        for o in range(out_len):
            pos = o * stride + j - padding
            if 0 <= pos < n:
                acc += dz[o] * x[pos]
                dxv[pos] += dz[o] * k[j]
        dkv[j] = acc
    for o in range(out_len):
        bsum += dz[o]
    db[0] = bsum
    return dk, db, dx


def tconv1d_forward(double[::1] x, double[::1] k, double[::1] b,
                    Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t out_len):
    cdef Py_ssize_t in_len = x.shape[0]
    cdef Py_ssize_t ksz = k.shape[0]
    cdef Py_ssize_t full_len = (in_len - 1) * stride + ksz
    if padding + out_len > full_len:
        full_len = padding + out_len
    cdef cnp.ndarray[double, ndim=1] full = np.zeros(full_len, dtype=np.float64)
    cdef double[::1] fv = full
    cdef Py_ssize_t i, j
    for j in range(ksz):
        for i in range(in_len):
            fv[i * stride + j] += k[j] * x[i]
    cdef cnp.ndarray[double, ndim=1] z = np.empty(out_len, dtype=np.float64)
    cdef double[::1] zv = z
    cdef double bias = b[0]
    for i in range(out_len):
        zv[i] = fv[padding + i] + bias
    return z


def tconv1d_backward(double[::1] x, double[::1] k, double[::1] dz,
                     Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t in_len = x.shape[0]
    cdef Py_ssize_t ksz = k.shape[0]
    cdef Py_ssize_t out_len = dz.shape[0]
    cdef Py_ssize_t full_len = (in_len - 1) * stride + ksz
    if padding + out_len > full_len:
        full_len = padding + out_len
    cdef cnp.ndarray[double, ndim=1] dfull = np.zeros(full_len, dtype=np.float64)
    cdef double[::1] dfv = dfull
    cdef Py_ssize_t i, j
    for i in range(out_len):
        dfv[padding + i] = dz[i]
    cdef cnp.ndarray[double, ndim=1] dk = np.zeros(ksz, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] db = np.zeros(1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dx = np.zeros(in_len, dtype=np.float64)
    cdef double[::1] dkv = dk
    cdef double[::1] dxv = dx
    cdef double acc
    cdef double bsum = 0.0
    for j in range(ksz):
        acc = 0.0
        for i in range(in_len):
            acc += x[i] * dfv[i * stride + j]
            dxv[i] += k[j] * dfv[i * stride + j]
        dkv[j] = acc
    for i in range(out_len):
        bsum += dz[i]
    db[0] = bsum
    return dk, db, dx
