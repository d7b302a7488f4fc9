# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: dense kernels for the training hot loops."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

NAME = "cython"


def matmul(double[:, ::1] a, double[:, ::1] b):
    """a @ b for row-major float64 matrices."""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double aip
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            if aip != 0.0:
                for j in range(n):
                    out[i, j] += aip * b[p, j]
    return out_arr


def matmul_nt(double[:, ::1] a, double[:, ::1] b):
    """a @ b.T"""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[0]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[j, p]
            out[i, j] = acc
    return out_arr


def matmul_tn(double[:, ::1] a, double[:, ::1] b):
    """a.T @ b"""
    cdef Py_ssize_t k = a.shape[0], m = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double api
    for p in range(k):
        for i in range(m):
            api = a[p, i]
            if api != 0.0:
                for j in range(n):
                    out[i, j] += api * b[p, j]
    return out_arr


def relu_forward(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def relu_backward(double[:, ::1] x, double[:, ::1] g):
    """Upstream gradient masked where the forward input was <= 0."""
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = g[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def softmax(double[:, ::1] logits):
    """Row-wise softmax, shifted by the row max for stability."""
    cdef Py_ssize_t m = logits.shape[0], n = logits.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, z
    for i in range(m):
        mx = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(n):
            out[i, j] = exp(logits[i, j] - mx)
            z += out[i, j]
        for j in range(n):
            out[i, j] /= z
    return out_arr


def softmax_cross_entropy(double[:, ::1] logits, long[::1] targets):
    """Mean negative log-softmax of the target entries.

    Returns ``(loss, grad)`` where ``grad = (softmax - onehot) / batch``.
    """
    cdef Py_ssize_t m = logits.shape[0], n = logits.shape[1]
    grad_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j
    cdef double mx, z, loss = 0.0, inv_m = 1.0 / m
    for i in range(m):
        mx = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(n):
            grad[i, j] = exp(logits[i, j] - mx)
            z += grad[i, j]
        loss += log(z) - (logits[i, targets[i]] - mx)
        for j in range(n):
            grad[i, j] /= z
        grad[i, targets[i]] -= 1.0
        for j in range(n):
            grad[i, j] *= inv_m
    return loss * inv_m, grad_arr


def sgd_momentum_update(double[:, ::1] w, double[:, ::1] g, double[:, ::1] buf,
                        double lr, double momentum, double weight_decay):
    """In-place SGD step: buf <- momentum*buf + (g + wd*w); w <- w - lr*buf."""
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1]
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            buf[i, j] = momentum * buf[i, j] + g[i, j] + weight_decay * w[i, j]
            w[i, j] -= lr * buf[i, j]


def adam_update(double[:, ::1] w, double[:, ::1] g, double[:, ::1] m_buf,
                double[:, ::1] v_buf, long t, double lr, double beta1,
                double beta2, double eps, double weight_decay):
    """In-place Adam step with bias correction; t is the 1-based step index."""
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1]
    cdef Py_ssize_t i, j
    cdef double eff, mhat, vhat
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    for i in range(m):
        for j in range(n):
            eff = g[i, j] + weight_decay * w[i, j]
            m_buf[i, j] = beta1 * m_buf[i, j] + (1.0 - beta1) * eff
            v_buf[i, j] = beta2 * v_buf[i, j] + (1.0 - beta2) * eff * eff
            mhat = m_buf[i, j] / c1
            vhat = v_buf[i, j] / c2
            w[i, j] -= lr * mhat / (sqrt(vhat) + eps)
