"""Hot numeric kernels: numba-compiled by default, pure numpy on demand.

The entropic transport solver spends essentially all of its time in two
kernels: the pairwise squared-distance matrix and the log-domain scaling
iterations. Both are provided in a numba ``@njit`` variant and a pure-numpy
variant with identical semantics. Set ``ECGOT_NO_NUMBA=1`` (or numba being
unavailable) to select the numpy path; ``benchmarks/bench_kernels.py``
compares the two.
"""
from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    flag = os.environ.get("ECGOT_NO_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def pairwise_sq_dists_numpy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared euclidean distances between rows of x (n,d) and y (m,d)."""
    out = np.empty((x.shape[0], y.shape[0]))
    for i in range(x.shape[0]):
        diff = y - x[i]
        out[i] = np.einsum("md,md->m", diff, diff)
    return out


def sinkhorn_log_numpy(
    cost: np.ndarray,
    p_s: np.ndarray,
    p_t: np.ndarray,
    gamma: float,
    max_iter: int,
    tol: float,
    lu: np.ndarray,
    lv: np.ndarray,
) -> tuple[np.ndarray, int, float, np.ndarray, np.ndarray]:
    """Log-domain Sinkhorn scaling from warm-start potentials (lu, lv).

    Returns (plan, iterations, marginal_error, lu, lv).
    """
    a = -cost / gamma
    log_ps = np.log(p_s)
    log_pt = np.log(p_t)
    lu = lu.copy()
    lv = lv.copy()
    pi = np.exp(lu[:, None] + a + lv[None, :])
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        m = a + lv[None, :]
        mx = m.max(axis=1)
        lu = log_ps - (mx + np.log(np.exp(m - mx[:, None]).sum(axis=1)))
        m = a + lu[:, None]
        mx = m.max(axis=0)
        lv = log_pt - (mx + np.log(np.exp(m - mx[None, :]).sum(axis=0)))
        pi = np.exp(lu[:, None] + a + lv[None, :])
        err = max(
            np.abs(pi.sum(axis=1) - p_s).max(),
            np.abs(pi.sum(axis=0) - p_t).max(),
        )
        if err < tol:
            break
    return pi, it, float(err), lu, lv


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

NUMBA_ENABLED = False

if _numba_requested():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None
    if njit is not None:

        @njit(cache=True)
        def pairwise_sq_dists_numba(x, y):  # pragma: no cover - compiled
            n, d = x.shape
            m = y.shape[0]
            out = np.empty((n, m))
            for i in range(n):
                for j in range(m):
                    s = 0.0
                    for k in range(d):
                        diff = x[i, k] - y[j, k]
                        s += diff * diff
                    out[i, j] = s
            return out

        @njit(cache=True)
        def sinkhorn_log_numba(cost, p_s, p_t, gamma, max_iter, tol, lu0, lv0):  # pragma: no cover - compiled
            ns, nt = cost.shape
            a = -cost / gamma
            log_ps = np.log(p_s)
            log_pt = np.log(p_t)
            lu = lu0.copy()
            lv = lv0.copy()
            pi = np.exp(a)
            err = np.inf
            it = 0
            for it in range(1, max_iter + 1):
                for i in range(ns):
                    mx = -np.inf
                    for j in range(nt):
                        v = a[i, j] + lv[j]
                        if v > mx:
                            mx = v
                    s = 0.0
                    for j in range(nt):
                        s += np.exp(a[i, j] + lv[j] - mx)
                    lu[i] = log_ps[i] - (mx + np.log(s))
                for j in range(nt):
                    mx = -np.inf
                    for i in range(ns):
                        v = a[i, j] + lu[i]
                        if v > mx:
                            mx = v
                    s = 0.0
                    for i in range(ns):
                        s += np.exp(a[i, j] + lu[i] - mx)
                    lv[j] = log_pt[j] - (mx + np.log(s))
                err = 0.0
                for j in range(nt):
                    cs = 0.0
                    for i in range(ns):
                        cs += np.exp(lu[i] + a[i, j] + lv[j])
                    e = abs(cs - p_t[j])
                    if e > err:
                        err = e
                for i in range(ns):
                    rs = 0.0
                    for j in range(nt):
                        pij = np.exp(lu[i] + a[i, j] + lv[j])
                        pi[i, j] = pij
                        rs += pij
                    e = abs(rs - p_s[i])
                    if e > err:
                        err = e
                if err < tol:
                    break
            return pi, it, err, lu, lv

        NUMBA_ENABLED = True


if NUMBA_ENABLED:
    pairwise_sq_dists = pairwise_sq_dists_numba
    _sinkhorn_log = sinkhorn_log_numba
else:
    pairwise_sq_dists = pairwise_sq_dists_numpy
    _sinkhorn_log = sinkhorn_log_numpy


# warm-start annealing: halve the regularization from the cost scale down to
# the target; each stage reuses the previous stage's potentials
ANNEAL_FACTOR = 4.0
ANNEAL_STAGE_ITER = 500


def sinkhorn_log(
    cost: np.ndarray,
    p_s: np.ndarray,
    p_t: np.ndarray,
    gamma: float,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, int, float]:
    """Log-domain Sinkhorn with epsilon scaling for small regularization.

    Returns (plan, final-stage iterations, marginal_error).
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    p_s = np.ascontiguousarray(p_s, dtype=np.float64)
    p_t = np.ascontiguousarray(p_t, dtype=np.float64)
    gamma = float(gamma)
    lu = np.zeros(cost.shape[0])
    lv = np.zeros(cost.shape[1])
    start = float(cost.mean())
    if start > gamma > 0.0:
        g = start
        while g > gamma * ANNEAL_FACTOR:
            _, _, _, lu, lv = _sinkhorn_log(
                cost, p_s, p_t, g, ANNEAL_STAGE_ITER, tol, lu, lv
            )
            g /= ANNEAL_FACTOR
    pi, it, err, _, _ = _sinkhorn_log(
        cost, p_s, p_t, gamma, int(max_iter), float(tol), lu, lv
    )
    return pi, int(it), float(err)
