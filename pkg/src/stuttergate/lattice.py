"""Transducer-lattice backend selection and the array-level API.

The forward/backward recursions over the (t, u) alignment lattice are the
hot inner loop of transducer training.  A compiled Cython kernel is used
when the extension built; otherwise the pure-python twin takes over.
Set STUTTERGATE_LATTICE=py or =ext to force a backend (ext raises if the
extension is unavailable).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import NumericFailureError

_REQUESTED = os.environ.get("STUTTERGATE_LATTICE", "auto")

if _REQUESTED not in ("auto", "py", "ext"):
    raise ValueError(f"STUTTERGATE_LATTICE must be auto, py or ext, not {_REQUESTED!r}")

if _REQUESTED in ("auto", "ext"):
    try:
        from . import _latticext as _backend

        BACKEND = "ext"
    except ImportError:
        if _REQUESTED == "ext":
            raise
        from . import _lattice_py as _backend

        BACKEND = "py"
else:
    from . import _lattice_py as _backend

    BACKEND = "py"


def get_backend(name: str):
    """Return the kernel module for an explicit backend name (for benchmarks)."""
    if name == "ext":
        from . import _latticext

        return _latticext
    if name == "py":
        from . import _lattice_py

        return _lattice_py
    raise ValueError(f"unknown lattice backend {name!r}")


def _as_c(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float64)


def forward_backward(log_blank, log_emit, backend=None):
    """Forward/backward log-probabilities over the alignment lattice.

    log_blank[t, u] is the blank log-probability at lattice node (t, u),
    for t in [0, T) and u in [0, U]; log_emit[t, u] is the log-probability
    of emitting target label u+1 at node (t, u).  Returns
    (log_alpha [T, U+1], log_beta [T, U+1], log_likelihood).
    """
    kern = backend or _backend
    lb = _as_c(log_blank)
    le = _as_c(log_emit)
    T, U1 = lb.shape
    if T < 1 or le.shape != (T, U1 - 1):
        raise ValueError(f"inconsistent lattice shapes {lb.shape} / {le.shape}")
    alpha = np.empty((T, U1))
    beta = np.empty((T, U1))
    ll = kern.lattice_forward(lb, le, alpha)
    ll_b = kern.lattice_backward(lb, le, beta)
    if not (np.isfinite(ll) and np.isfinite(ll_b)):
        raise NumericFailureError(
            f"non-finite lattice log-likelihood (forward {ll}, backward {ll_b}) at cell "
            f"(T-1, U)=({T - 1}, {U1 - 1})"
        )
    return alpha, beta, ll


def occupancies(log_alpha, log_beta, log_blank, log_emit, log_like, backend=None):
    """Posterior transition occupancies (blank [T, U+1], emit [T, U]).

    occ_blank[t, u] is the probability that an alignment path takes the
    blank transition out of node (t, u); occ_emit likewise for label
    emissions.  These are the only quantities the loss gradient needs.
    """
    kern = backend or _backend
    lb = _as_c(log_blank)
    le = _as_c(log_emit)
    occ_b = np.empty_like(lb)
    occ_e = np.empty_like(le)
    kern.lattice_occupancy(_as_c(log_alpha), _as_c(log_beta), lb, le,
                           float(log_like), occ_b, occ_e)
    return occ_b, occ_e
