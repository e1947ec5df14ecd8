"""Pure-NumPy Uzawa iteration over a CSR gradient matrix.

Reference implementation of the dual projected-gradient loop; also the
import-time fallback when the compiled extension is unavailable. Both
backends implement the identical iteration

    v_{k+1} = U - B^T mu_k
    mu_{k+1} = max(0, mu_k + rho * (B v_{k+1} - D))

with B = -h G, stopping when the iterate change and the primal residual
both drop below tol.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_DIVERGED = 2


def uzawa_csr(
    g_data: np.ndarray,
    g_indices: np.ndarray,
    g_indptr: np.ndarray,
    ncols: int,
    gaps: np.ndarray,
    desired: np.ndarray,
    h: float,
    rho: float,
    tol: float,
    tol_primal: float,
    max_iter: int,
    mu0: np.ndarray,
    guard: float = 1e100,
):
    """Run the Uzawa loop; returns (v, mu, iterations, status, primal_residual).

    ``tol`` bounds the iterate change (velocity units); ``tol_primal``
    bounds the worst constraint violation B v - D (meters). The returned
    multipliers are exactly the ones that produced the returned velocity,
    so v = U - B^T mu holds on every exit path.
    """
    m = len(g_indptr) - 1
    U = desired
    if m == 0:
        return U.copy(), np.zeros(0), 1, STATUS_CONVERGED, 0.0

    G = sp.csr_matrix((g_data, g_indices, g_indptr), shape=(m, ncols))
    GT = G.T
    mu = mu0.copy()
    mu_used = mu
    v_prev = None
    v = U.copy()
    primal = np.inf
    status = STATUS_MAX_ITER
    iterations = 0
    for _ in range(max_iter):
        mu_used = mu
        v = U + h * (GT @ mu)
        iterations += 1
        r = -h * (G @ v) - gaps  # B v - D
        primal = max(0.0, float(r.max()))
        if v_prev is not None:
            dv = float(np.linalg.norm(v - v_prev))
            if dv <= tol and primal <= tol_primal:
                status = STATUS_CONVERGED
                break
        mu_next = np.maximum(0.0, mu + rho * r)
        peak = float(mu_next.max())
        if not np.isfinite(peak) or peak > guard:
            status = STATUS_DIVERGED
            break
        v_prev = v
        mu = mu_next
    return v, mu_used, iterations, status, primal
