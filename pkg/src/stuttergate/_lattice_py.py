"""Pure-python transducer-lattice kernels, the fallback backend.

Kept in lockstep with _latticext.pyx: same recurrences, same log-sum-exp
formula (max + log1p(exp(min - max))), so the two backends agree to the
last bit on the same libm.
"""

from math import exp, inf, log1p


def _lse(a: float, b: float) -> float:
    if a == -inf:
        return b
    if b == -inf:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def lattice_forward(lb, le, alpha):
    T, U = lb.shape[0], lb.shape[1] - 1
    alpha[0, 0] = 0.0
    for t in range(1, T):
        alpha[t, 0] = alpha[t - 1, 0] + lb[t - 1, 0]
    for u in range(1, U + 1):
        alpha[0, u] = alpha[0, u - 1] + le[0, u - 1]
    for t in range(1, T):
        for u in range(1, U + 1):
            alpha[t, u] = _lse(alpha[t - 1, u] + lb[t - 1, u],
                               alpha[t, u - 1] + le[t, u - 1])
    return alpha[T - 1, U] + lb[T - 1, U]


def lattice_backward(lb, le, beta):
    T, U = lb.shape[0], lb.shape[1] - 1
    beta[T - 1, U] = lb[T - 1, U]
    for t in range(T - 2, -1, -1):
        beta[t, U] = beta[t + 1, U] + lb[t, U]
    for u in range(U - 1, -1, -1):
        beta[T - 1, u] = beta[T - 1, u + 1] + le[T - 1, u]
    for t in range(T - 2, -1, -1):
        for u in range(U - 1, -1, -1):
            beta[t, u] = _lse(lb[t, u] + beta[t + 1, u],
                              le[t, u] + beta[t, u + 1])
    return beta[0, 0]


def lattice_occupancy(alpha, beta, lb, le, ll, occ_b, occ_e):
    T, U = lb.shape[0], lb.shape[1] - 1
    for t in range(T - 1):
        for u in range(U + 1):
            occ_b[t, u] = exp(alpha[t, u] + lb[t, u] + beta[t + 1, u] - ll)
    for u in range(U):
        occ_b[T - 1, u] = 0.0
    occ_b[T - 1, U] = exp(alpha[T - 1, U] + lb[T - 1, U] - ll)
    for t in range(T):
        for u in range(U):
            occ_e[t, u] = exp(alpha[t, u] + le[t, u] + beta[t, u + 1] - ll)
