# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled transducer-lattice kernels.

Same recurrences as _lattice_py; selected at import by stuttergate.lattice.
"""

from libc.math cimport exp, log1p, INFINITY


cdef inline double lse(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def lattice_forward(double[:, ::1] lb, double[:, ::1] le, double[:, ::1] alpha):
    cdef Py_ssize_t T = lb.shape[0]
    cdef Py_ssize_t U = lb.shape[1] - 1
    cdef Py_ssize_t t, u
    with nogil:
        alpha[0, 0] = 0.0
        for t in range(1, T):
            alpha[t, 0] = alpha[t - 1, 0] + lb[t - 1, 0]
        for u in range(1, U + 1):
            alpha[0, u] = alpha[0, u - 1] + le[0, u - 1]
        for t in range(1, T):
            for u in range(1, U + 1):
                alpha[t, u] = lse(alpha[t - 1, u] + lb[t - 1, u],
                                  alpha[t, u - 1] + le[t, u - 1])
    return alpha[T - 1, U] + lb[T - 1, U]


def lattice_backward(double[:, ::1] lb, double[:, ::1] le, double[:, ::1] beta):
    cdef Py_ssize_t T = lb.shape[0]
    cdef Py_ssize_t U = lb.shape[1] - 1
    cdef Py_ssize_t t, u
    with nogil:
        beta[T - 1, U] = lb[T - 1, U]
        for t in range(T - 2, -1, -1):
            beta[t, U] = beta[t + 1, U] + lb[t, U]
        for u in range(U - 1, -1, -1):
            beta[T - 1, u] = beta[T - 1, u + 1] + le[T - 1, u]
        for t in range(T - 2, -1, -1):
            for u in range(U - 1, -1, -1):
                beta[t, u] = lse(lb[t, u] + beta[t + 1, u],
                                 le[t, u] + beta[t, u + 1])
    return beta[0, 0]


def lattice_occupancy(double[:, ::1] alpha, double[:, ::1] beta,
                      double[:, ::1] lb, double[:, ::1] le, double ll,
                      double[:, ::1] occ_b, double[:, ::1] occ_e):
    cdef Py_ssize_t T = lb.shape[0]
    cdef Py_ssize_t U = lb.shape[1] - 1
    cdef Py_ssize_t t, u
    with nogil:
        for t in range(T - 1):
            for u in range(U + 1):
                occ_b[t, u] = exp(alpha[t, u] + lb[t, u] + beta[t + 1, u] - ll)
        for u in range(U):
            occ_b[T - 1, u] = 0.0
        occ_b[T - 1, U] = exp(alpha[T - 1, U] + lb[T - 1, U] - ll)
        for t in range(T):
            for u in range(U):
                occ_e[t, u] = exp(alpha[t, u] + le[t, u] + beta[t, u + 1] - ll)
