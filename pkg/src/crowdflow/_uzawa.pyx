# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Uzawa iteration over a CSR gradient matrix.

Hot kernel of the projection solver: one C loop per dual iteration, no
temporaries. Mirrors crowdflow.uzawa_fallback.uzawa_csr; summation runs in
fixed CSR row order, so results are reproducible for given inputs.
"""

import numpy as np

from libc.math cimport isfinite, sqrt

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_DIVERGED = 2


def uzawa_csr(
    double[::1] g_data,
    int[::1] g_indices,
    int[::1] g_indptr,
    int ncols,
    double[::1] gaps,
    double[::1] desired,
    double h,
    double rho,
    double tol,
    double tol_primal,
    long max_iter,
    double[::1] mu0,
    double guard=1e100,
):
    """Run the Uzawa loop; returns (v, mu, iterations, status, primal_residual).

    ``tol`` bounds the iterate change (velocity units); ``tol_primal``
    bounds the worst constraint violation B v - D (meters). The returned
    multipliers are exactly the ones that produced the returned velocity,
    so v = U - B^T mu holds on every exit path.
    """
    cdef int m = g_indptr.shape[0] - 1
    if m == 0:
        return np.asarray(desired).copy(), np.zeros(0), 1, STATUS_CONVERGED, 0.0

    v_arr = np.empty(ncols, dtype=np.float64)
    v_prev_arr = np.empty(ncols, dtype=np.float64)
    mu_arr = np.ascontiguousarray(mu0, dtype=np.float64).copy()
    mu_next_arr = np.empty(m, dtype=np.float64)
    r_arr = np.empty(m, dtype=np.float64)

    cdef double[::1] v = v_arr
    cdef double[::1] v_prev = v_prev_arr
    cdef double[::1] mu = mu_arr
    cdef double[::1] mu_next = mu_next_arr
    cdef double[::1] r = r_arr

    cdef long it = 0
    cdef int status = STATUS_MAX_ITER
    cdef int k, c, idx
    cdef double mk, s, rk, primal, d, dv2, t, peak
    cdef bint have_prev = False
    cdef bint swapped = False

    primal = 0.0
    while it < max_iter:
        # v = U + h * G^T mu  (i.e. v = U - B^T mu with B = -h G)
        for c in range(ncols):
            v[c] = desired[c]
        for k in range(m):
            mk = mu[k]
            if mk != 0.0:
                for idx in range(g_indptr[k], g_indptr[k + 1]):
                    v[g_indices[idx]] += h * mk * g_data[idx]
        it += 1

        # r = B v - D; primal residual = positive part of the worst row
        primal = 0.0
        for k in range(m):
            s = 0.0
            for idx in range(g_indptr[k], g_indptr[k + 1]):
                s += g_data[idx] * v[g_indices[idx]]
            rk = -h * s - gaps[k]
            r[k] = rk
            if rk > primal:
                primal = rk

        if have_prev:
            dv2 = 0.0
            for c in range(ncols):
                d = v[c] - v_prev[c]
                dv2 += d * d
            if sqrt(dv2) <= tol and primal <= tol_primal:
                status = STATUS_CONVERGED
                swapped = False
                break

        # dual ascent step, clipped to the nonnegative cone
        peak = 0.0
        for k in range(m):
            t = mu[k] + rho * r[k]
            if t < 0.0:
                t = 0.0
            mu_next[k] = t
            if t > peak:
                peak = t
        if not isfinite(peak) or peak > guard:
            status = STATUS_DIVERGED
            swapped = False
            break

        for c in range(ncols):
            v_prev[c] = v[c]
        have_prev = True
        mu, mu_next = mu_next, mu
        mu_arr, mu_next_arr = mu_next_arr, mu_arr
        swapped = True

    # After a bottom-of-loop swap the multipliers that produced v sit in
    # the "next" buffer; hand those back, not the freshly updated ones.
    return v_arr, (mu_next_arr if swapped else mu_arr), it, status, primal
