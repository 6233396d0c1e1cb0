# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-iteration kernels; same accumulation order as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef double _seq_sum(const double[::1] a) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(a.shape[0]):
        acc = acc + a[i]
    return acc


def seq_sum(a):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64).ravel()
    return _seq_sum(av)


def norm(v):
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(vv.shape[0]):
        acc = acc + vv[i] * vv[i]
    return sqrt(acc)


cdef void _matvec(const double[:, ::1] A, const double[::1] v, double[::1] out) noexcept nogil:
    cdef Py_ssize_t a, b
    cdef double acc
    for a in range(A.shape[0]):
        acc = 0.0
        for b in range(A.shape[1]):
            acc = acc + A[a, b] * v[b]
        out[a] = acc


cdef void _rmatvec(const double[:, ::1] A, const double[::1] v, double[::1] out) noexcept nogil:
    cdef Py_ssize_t a, b
    for b in range(A.shape[1]):
        out[b] = 0.0
    for a in range(A.shape[0]):
        for b in range(A.shape[1]):
            out[b] = out[b] + A[a, b] * v[a]


def matvec(A, v):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty(Av.shape[0])
    _matvec(Av, vv, out)
    return out


def rmatvec(A, v):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty(Av.shape[1])
    _rmatvec(Av, vv, out)
    return out


def chain_product(jacobians):
    """Return ``J_T ... J_1`` for ``jacobians = [J_1, ..., J_T]``."""
    cdef const double[:, ::1] J
    v = np.array(jacobians[0][:, 0], dtype=np.float64)
    for Jobj in jacobians[1:]:
        J = np.ascontiguousarray(Jobj, dtype=np.float64)
        out = np.empty(J.shape[0])
        _matvec(J, v, out)
        v = out
    return v


def batch_mean(rows):
    cdef const double[:, ::1] R = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t n = R.shape[0], d = R.shape[1], i, j
    out = np.zeros(d)
    cdef double[::1] o = out
    for i in range(n):
        for j in range(d):
            o[j] = o[j] + R[i, j]
    for j in range(d):
        o[j] = o[j] / n
    return out


cdef void _average(const double[::1] old, const double[::1] new, double tau,
                   double[::1] out) noexcept nogil:
    cdef Py_ssize_t j
    cdef double keep = 1.0 - tau
    for j in range(old.shape[0]):
        out[j] = keep * old[j] + tau * new[j]


def moving_average(old, new, double tau):
    cdef const double[::1] o = np.ascontiguousarray(old, dtype=np.float64)
    cdef const double[::1] n = np.ascontiguousarray(new, dtype=np.float64)
    out = np.empty(o.shape[0])
    _average(o, n, tau, out)
    return out


def nested_average(ws, gbars, double tau):
    return [moving_average(w, g, tau) for w, g in zip(ws, gbars)]


def linearized_average(ws, gs, js, delta_top, double tau):
    """Linearized moving average over levels T..1; returns ascending order."""
    cdef Py_ssize_t T = len(ws), i, j
    cdef const double[::1] w
    cdef const double[::1] g
    cdef const double[:, ::1] J
    cdef double[::1] nv
    cdef double[::1] corr
    cdef double[::1] dv
    cdef double keep = 1.0 - tau
    out = [None] * T
    delta = np.ascontiguousarray(delta_top, dtype=np.float64)
    for i in range(T - 1, -1, -1):
        w = np.ascontiguousarray(ws[i], dtype=np.float64)
        g = np.ascontiguousarray(gs[i], dtype=np.float64)
        J = np.ascontiguousarray(js[i], dtype=np.float64)
        new = np.empty(w.shape[0])
        cor = np.empty(w.shape[0])
        nxt = np.empty(w.shape[0])
        nv = new
        corr = cor
        dv = nxt
        _rmatvec(J, delta, corr)
        for j in range(w.shape[0]):
            nv[j] = (keep * w[j] + tau * g[j]) + corr[j]
            dv[j] = nv[j] - w[j]
        out[i] = new
        delta = nxt
    return out


def project_box(p, lower, upper):
    return np.minimum(np.maximum(p, lower), upper)


def project_ball(p, center, double radius):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(center, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], j
    cdef double acc = 0.0, diff, scale
    for j in range(n):
        diff = pv[j] - cv[j]
        acc = acc + diff * diff
    acc = sqrt(acc)
    out = np.empty(n)
    cdef double[::1] o = out
    if acc <= radius:
        for j in range(n):
            o[j] = pv[j]
        return out
    scale = radius / acc
    for j in range(n):
        o[j] = cv[j] + (pv[j] - cv[j]) * scale
    return out
