# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels: BLAS-backed affine layers plus fused
elementwise ops. Mirrors the contract of kernels.pyref."""

from libc.math cimport exp, log

import numpy as np

from scipy.linalg.cython_blas cimport dgemm

NAME = "ext"


cdef void _gemm(char ta, char tb, double alpha,
                double[:, ::1] a, double[:, ::1] b,
                double beta, double[:, ::1] c) noexcept nogil:
    # Row-major c = alpha * op(a) @ op(b) + beta * c, via the column-major
    # identity C^T = op(B)^T op(A)^T.
    cdef int m = c.shape[0]
    cdef int n = c.shape[1]
    cdef int k
    if ta == b'N':
        k = a.shape[1]
    else:
        k = a.shape[0]
    cdef int lda = a.shape[1]
    cdef int ldb = b.shape[1]
    cdef int ldc = n
    dgemm(&tb, &ta, &n, &m, &k, &alpha,
          &b[0, 0], &ldb, &a[0, 0], &lda, &beta, &c[0, 0], &ldc)


def affine(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t k = x.shape[1]
    cdef Py_ssize_t n = w.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    if m == 0 or n == 0:
        return out
    if k == 0:
        out[...] = 0.0
    else:
        _gemm(b'N', b'N', 1.0, x, w, 0.0, o)
    for i in range(m):
        for j in range(n):
            o[i, j] += b[j]
    return out


def affine_grad(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dy):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t k = x.shape[1]
    cdef Py_ssize_t n = w.shape[1]
    dx = np.empty((m, k))
    dw = np.empty((k, n))
    db = np.zeros(n)
    cdef double[:, ::1] dxv = dx
    cdef double[:, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef Py_ssize_t i, j
    if m == 0 or k == 0 or n == 0:
        dx[...] = 0.0
        dw[...] = 0.0
        return dx, dw, db
    _gemm(b'N', b'T', 1.0, dy, w, 0.0, dxv)
    _gemm(b'T', b'N', 1.0, x, dy, 0.0, dwv)
    for i in range(m):
        for j in range(n):
            dbv[j] += dy[i, j]
    return dx, dw, db


def relu(x):
    xc = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xc)
    cdef double[::1] xf = xc.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = xf.shape[0]
    for i in range(size):
        of[i] = xf[i] if xf[i] > 0.0 else 0.0
    return out


def relu_grad(x, dy):
    xc = np.ascontiguousarray(x, dtype=np.float64)
    dyc = np.ascontiguousarray(dy, dtype=np.float64)
    out = np.empty_like(xc)
    cdef double[::1] xf = xc.ravel()
    cdef double[::1] df = dyc.ravel()
    cdef double[::1] of = out.ravel()
    cdef Py_ssize_t i, size = xf.shape[0]
    for i in range(size):
        of[i] = df[i] if xf[i] > 0.0 else 0.0
    return out


def softmax(double[:, ::1] logits):
    cdef Py_ssize_t m = logits.shape[0]
    cdef Py_ssize_t n = logits.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double mx, s
    for i in range(m):
        mx = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(n):
            o[i, j] = exp(logits[i, j] - mx)
            s += o[i, j]
        for j in range(n):
            o[i, j] /= s
    return out


def softmax_xent(double[:, ::1] logits, labels):
    cdef Py_ssize_t m = logits.shape[0]
    cdef Py_ssize_t n = logits.shape[1]
    lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef long[::1] y = lab
    dl = np.empty((m, n))
    cdef double[:, ::1] d = dl
    cdef Py_ssize_t i, j
    cdef double mx, s, loss = 0.0
    cdef double inv_m = 1.0 / m
    for i in range(m):
        mx = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(n):
            d[i, j] = exp(logits[i, j] - mx)
            s += d[i, j]
        loss += log(s) - (logits[i, y[i]] - mx)
        for j in range(n):
            d[i, j] /= s
        d[i, y[i]] -= 1.0
        for j in range(n):
            d[i, j] *= inv_m
    return loss * inv_m, dl


def sgd_momentum(double[::1] w, double[::1] vel, double[::1] grad,
                 double lr, double momentum, double weight_decay):
    cdef Py_ssize_t i, size = w.shape[0]
    cdef double g
    for i in range(size):
        g = grad[i] + weight_decay * w[i]
        vel[i] = momentum * vel[i] + g
        w[i] -= lr * vel[i]
