"""Projection of spontaneous velocities onto the linearized feasible set.

For a configuration with candidate contacts (gaps D, gradient rows G) and
step h, the discrete feasible velocity set is {v : D + h G v >= 0}. With
B = -h G this reads {v : B v <= D}, and the actual velocity is

    u = argmin |v - U|^2  over  {B v <= D},

solved by Uzawa iteration on the saddle point of the Lagrangian. The
multipliers lambda are the contact pressures. This module also provides a
brute-force active-set oracle for small instances, KKT verification, the
homogeneous-cone projection with its Moreau decomposition, and the local
prox-regularity diagnostic built from the contact Gram matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .geometry import KIND_WALL, Configuration, ContactConstraint, SQRT2

STATUS_NAMES = {
    kernels.STATUS_CONVERGED: "converged",
    kernels.STATUS_MAX_ITER: "max_iterations",
    kernels.STATUS_DIVERGED: "diverged",
}


class InvalidRhoError(ValueError):
    """The Uzawa step length rho must be a positive finite number."""


class InfeasibleSystemError(ValueError):
    """A gap is below -eps_overlap; the configuration is not admissible."""


class TooManyConstraintsError(ValueError):
    """The exhaustive oracle only handles small systems (m <= 20)."""


class NonZeroGapError(ValueError):
    """Cone projection expects every listed contact to have gap exactly zero."""


class EmptyContactListError(ValueError):
    """The prox-regularity diagnostic needs at least one contact."""


class ConstraintSystem:
    """Assembled constraint rows for one projection solve.

    Holds the sparse gradient matrix G (one row per contact, shape
    m x 2N), the gap vector D, and the step h defining B = -h G. With
    ``scale_wall_rows`` the norm-1 wall rows and their gaps are multiplied
    by sqrt(2) to match the conditioning of disk-disk rows (the feasible
    set is unchanged).
    """

    def __init__(
        self,
        constraints: Sequence[ContactConstraint],
        h: float,
        n_disks: int,
        scale_wall_rows: bool = False,
    ):
        if h <= 0.0 or not math.isfinite(h):
            raise ValueError("step h must be positive and finite")
        self.contacts = list(constraints)
        self.h = float(h)
        self.n_disks = int(n_disks)
        self.scale_wall_rows = bool(scale_wall_rows)

        m = len(self.contacts)
        data: list[float] = []
        indices: list[int] = []
        indptr = np.zeros(m + 1, dtype=np.int32)
        gaps = np.empty(m)
        for k, c in enumerate(self.contacts):
            cols, vals = c.grad_entries()
            scale = SQRT2 if (self.scale_wall_rows and c.kind == KIND_WALL) else 1.0
            indices.extend(cols)
            data.extend(scale * v for v in vals)
            indptr[k + 1] = len(indices)
            gaps[k] = scale * c.gap
        self.g_data = np.asarray(data, dtype=np.float64)
        self.g_indices = np.asarray(indices, dtype=np.int32)
        self.g_indptr = indptr
        self.gaps = gaps
        self.G = sp.csr_matrix(
            (self.g_data, self.g_indices, self.g_indptr), shape=(m, 2 * self.n_disks)
        )
        self._b_norm_sq: Optional[float] = None

    @property
    def m(self) -> int:
        return len(self.contacts)

    def apply_B(self, v: np.ndarray) -> np.ndarray:
        return -self.h * (self.G @ v)

    def apply_BT(self, mu: np.ndarray) -> np.ndarray:
        return -self.h * (self.G.T @ mu)

    def b_norm_sq(self, n_iters: int = 50) -> float:
        """Estimate of ||B||^2 by power iteration on B^T B (cached)."""
        if self._b_norm_sq is not None:
            return self._b_norm_sq
        if self.m == 0 or self.n_disks == 0:
            self._b_norm_sq = 0.0
            return 0.0
        n = 2 * self.n_disks
        # deterministic start; the ramp avoids starting orthogonal to the
        # dominant eigenvector on symmetric configurations
        x = 1.0 + 0.001 * np.arange(n)
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(n_iters):
            y = self.G.T @ (self.G @ x)
            norm = float(np.linalg.norm(y))
            if norm == 0.0:
                break
            est = float(x @ y)
            x = y / norm
        if est <= 0.0:
            # x fell in the null space: fall back to the Frobenius bound
            est = float(self.g_data @ self.g_data)
        self._b_norm_sq = self.h * self.h * est
        return self._b_norm_sq


@dataclass
class ProjectionResult:
    """Outcome of one projection solve."""

    u: np.ndarray            # (2N,) actual velocity
    lam: np.ndarray          # (m,) nonnegative multipliers (contact pressures)
    iterations: int
    converged: bool
    status: str              # "converged" | "max_iterations" | "diverged"
    primal_residual: float   # max(0, max_k (B u - D)_k)
    complementarity: float   # |lam . (B u - D)|
    stationarity: float      # |u + B^T lam - U|
    rho: float = float("nan")
    b_norm_sq: float = float("nan")


def default_tolerance(n_disks: int) -> float:
    return 1e-8 * math.sqrt(max(n_disks, 1))


def _finish_result(
    sys: ConstraintSystem,
    U: np.ndarray,
    u: np.ndarray,
    lam: np.ndarray,
    iterations: int,
    status_code: int,
    primal: float,
    rho: float,
    b_norm_sq: float,
) -> ProjectionResult:
    if sys.m:
        r = sys.apply_B(u) - sys.gaps
        comp = abs(float(lam @ r))
        stat = float(np.linalg.norm(u + sys.apply_BT(lam) - U))
    else:
        comp = 0.0
        stat = float(np.linalg.norm(u - U))
    return ProjectionResult(
        u=u,
        lam=np.maximum(lam, 0.0),
        iterations=int(iterations),
        converged=status_code == kernels.STATUS_CONVERGED,
        status=STATUS_NAMES[status_code],
        primal_residual=float(primal),
        complementarity=comp,
        stationarity=stat,
        rho=rho,
        b_norm_sq=b_norm_sq,
    )


def uzawa_project(
    sys: ConstraintSystem,
    U: np.ndarray,
    rho: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: int = 100_000,
    mu0: Optional[np.ndarray] = None,
    eps_overlap: float = 1e-8,
) -> ProjectionResult:
    """Project U onto {v : B v <= D} by Uzawa iteration.

    With rho=None the step is set to 1/||B||^2 (power-iteration estimate),
    the midpoint of the guaranteed convergence window (0, 2/||B||^2).
    ``mu0`` warm-starts the multipliers; the cold start mu0 = 0 is the
    default. Iteration stops when the velocity change drops below tol and
    the worst constraint violation drops below h*tol (the violation is a
    length; comparing it per unit step keeps the test in velocity units and
    bounds every end-of-step gap by -h*tol). Non-convergence and divergence
    are reported in the result, not raised.
    """
    U = np.ascontiguousarray(U, dtype=np.float64).ravel()
    if U.size != 2 * sys.n_disks:
        raise ValueError("U must have 2N components")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if sys.m and float(sys.gaps.min()) < -eps_overlap:
        raise InfeasibleSystemError(
            f"gap {sys.gaps.min():.3e} below -eps_overlap={-eps_overlap:.3e}"
        )
    if tol is None:
        tol = default_tolerance(sys.n_disks)

    b_norm_sq = float("nan")
    if rho is None:
        b_norm_sq = sys.b_norm_sq()
        rho = 1.0 / b_norm_sq if b_norm_sq > 0.0 else 1.0
    if not (rho > 0.0 and math.isfinite(rho)):
        raise InvalidRhoError(f"rho must be positive and finite, got {rho}")

    if mu0 is None:
        mu0 = np.zeros(sys.m)
    else:
        mu0 = np.ascontiguousarray(mu0, dtype=np.float64)
        if mu0.shape != (sys.m,):
            raise ValueError("mu0 must have one entry per constraint")

    v, mu, iterations, status, primal = kernels.uzawa_csr(
        sys.g_data,
        sys.g_indices,
        sys.g_indptr,
        2 * sys.n_disks,
        sys.gaps,
        U,
        sys.h,
        float(rho),
        float(tol),
        float(tol) * sys.h,
        int(max_iter),
        mu0,
    )
    return _finish_result(sys, U, v, mu, iterations, status, primal, float(rho), b_norm_sq)


def qp_oracle_project(
    sys: ConstraintSystem,
    U: np.ndarray,
    feas_tol: float = 1e-9,
) -> ProjectionResult:
    """Exact projection by exhaustive active-set enumeration (tests only).

    Enumerates candidate active sets by increasing size; each candidate is
    an equality-constrained least-squares solve followed by KKT sign
    checks. The first candidate satisfying all KKT conditions is the global
    minimizer (the problem is convex). Limited to m <= 20 rows.
    """
    m = sys.m
    if m > 20:
        raise TooManyConstraintsError(f"oracle limited to 20 constraints, got {m}")
    U = np.ascontiguousarray(U, dtype=np.float64).ravel()
    if U.size != 2 * sys.n_disks:
        raise ValueError("U must have 2N components")
    if m == 0:
        return _finish_result(
            sys, U, U.copy(), np.zeros(0), 0, kernels.STATUS_CONVERGED, 0.0,
            float("nan"), float("nan"),
        )

    B = -sys.h * sys.G.toarray()
    D = sys.gaps
    scale = 1.0 + float(np.abs(U).max(initial=0.0)) + float(np.abs(D).max(initial=0.0))
    tested = 0
    for size in range(m + 1):
        for active in itertools.combinations(range(m), size):
            tested += 1
            if size == 0:
                v = U.copy()
                nu = np.zeros(0)
            else:
                rows = list(active)
                Ba = B[rows]
                M = Ba @ Ba.T
                rhs = Ba @ U - D[rows]
                nu = np.linalg.lstsq(M, rhs, rcond=None)[0]
                v = U - Ba.T @ nu
                if float(np.abs(Ba @ v - D[rows]).max()) > 1e-8 * scale:
                    continue  # inconsistent active set
                if float(nu.min()) < -feas_tol * scale:
                    continue  # dual sign violated
            slack = B @ v - D
            if float(slack.max()) > feas_tol * scale:
                continue  # primal infeasible
            lam = np.zeros(m)
            if size:
                lam[list(active)] = np.maximum(nu, 0.0)
            return _finish_result(
                sys, U, v, lam, tested, kernels.STATUS_CONVERGED,
                max(0.0, float(slack.max())), float("nan"), float("nan"),
            )
    raise RuntimeError("active-set enumeration found no KKT point (infeasible system?)")


@dataclass
class KKTReport:
    """Residuals of the saddle-point optimality system for one solve."""

    stationarity: float      # |u + B^T lam - U|
    primal_residual: float   # max(0, max(B u - D))
    dual_violation: float    # max(0, -min lam)
    complementarity: float   # |lam . (B u - D)|
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.stationarity <= self.tol
            and self.primal_residual <= self.tol
            and self.dual_violation <= self.tol
            and self.complementarity <= self.tol
        )


def kkt_check(
    sys: ConstraintSystem,
    res: ProjectionResult,
    U: np.ndarray,
    tol: float = 1e-6,
) -> KKTReport:
    """Verify stationarity, feasibility, dual sign, and complementarity."""
    U = np.ascontiguousarray(U, dtype=np.float64).ravel()
    u, lam = res.u, res.lam
    if sys.m:
        r = sys.apply_B(u) - sys.gaps
        stationarity = float(np.linalg.norm(u + sys.apply_BT(lam) - U))
        primal = max(0.0, float(r.max()))
        dual = max(0.0, -float(lam.min()))
        comp = abs(float(lam @ r))
    else:
        stationarity = float(np.linalg.norm(u - U))
        primal = dual = comp = 0.0
    return KKTReport(stationarity, primal, dual, comp, tol)


def cone_project_contact(
    cfg: Configuration,
    contacts: Sequence[ContactConstraint],
    U: np.ndarray,
    gap_tol: float = 1e-9,
    tol: Optional[float] = None,
):
    """Moreau decomposition of U at a contact configuration.

    All listed contacts must have gap exactly zero (within gap_tol): the
    feasible set is then the homogeneous cone C = {v : G v >= 0}, and
    U splits as u_C + u_N with u_C the projection onto C, u_N the
    projection onto the polar cone N, and u_C . u_N = 0.
    """
    for c in contacts:
        if abs(c.gap) > gap_tol:
            raise NonZeroGapError(
                f"contact {c.key()} has gap {c.gap:.3e}; cone projection needs gap 0"
            )
    shape = np.shape(U)
    U_flat = np.ascontiguousarray(U, dtype=np.float64).ravel()
    if not contacts:
        return U_flat.copy().reshape(shape), np.zeros(shape)
    zeroed = [replace(c, gap=0.0) for c in contacts]
    sys = ConstraintSystem(zeroed, h=1.0, n_disks=cfg.n)
    if tol is None:
        tol = 1e-11 * (1.0 + float(np.linalg.norm(U_flat)))
    res = uzawa_project(sys, U_flat, tol=tol, max_iter=200_000)
    u_c = res.u
    u_n = U_flat - u_c
    return u_c.reshape(shape), u_n.reshape(shape)


def _project_simplex(y: np.ndarray) -> np.ndarray:
    # Euclidean projection onto {x >= 0, sum x = 1} (sort-based algorithm)
    srt = np.sort(y)[::-1]
    css = np.cumsum(srt) - 1.0
    ks = np.arange(1, len(y) + 1)
    cond = srt - css / ks > 0
    k = ks[cond][-1]
    tau = css[k - 1] / k
    return np.maximum(y - tau, 0.0)


def _simplex_min_quadratic(C: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimize x^T C x over the probability simplex (C is PSD).

    Projected gradient descent with multi-start; for m <= 3 the minimum is
    also refined by exact enumeration of all simplex faces.
    """
    m = C.shape[0]
    if m == 1:
        return float(C[0, 0]), np.ones(1)

    eigs = np.linalg.eigvalsh(C)
    lip = 2.0 * max(float(eigs[-1]), 1e-300)
    step = 1.0 / lip

    starts = [np.full(m, 1.0 / m)]
    starts.extend(np.eye(m)[k] for k in range(m))
    if m <= 16:
        for a, b in itertools.combinations(range(m), 2):
            x = np.zeros(m)
            x[a] = x[b] = 0.5
            starts.append(x)
    rng = np.random.default_rng(0)
    for _ in range(8):
        x = rng.random(m)
        starts.append(x / x.sum())

    best_val = np.inf
    best_x = starts[0]
    for x0 in starts:
        x = x0
        prev = np.inf
        for _ in range(2000):
            g = 2.0 * (C @ x)
            x = _project_simplex(x - step * g)
            val = float(x @ C @ x)
            if prev - val <= 1e-16 * (1.0 + abs(val)):
                break
            prev = val
        val = float(x @ C @ x)
        if val < best_val:
            best_val, best_x = val, x

    if m <= 3:
        idx = list(range(m))
        for size in range(1, m + 1):
            for sub in itertools.combinations(idx, size):
                Cs = C[np.ix_(sub, sub)]
                ones = np.ones(size)
                try:
                    y = np.linalg.solve(Cs, ones)
                except np.linalg.LinAlgError:
                    y = np.linalg.lstsq(Cs, ones, rcond=None)[0]
                s = float(y.sum())
                if abs(s) < 1e-300:
                    continue
                y = y / s
                if float(y.min()) < -1e-12:
                    continue
                lam = np.zeros(m)
                lam[list(sub)] = np.maximum(y, 0.0)
                lam = lam / lam.sum()
                val = float(lam @ C @ lam)
                if val < best_val:
                    best_val, best_x = val, lam
    return best_val, best_x


@dataclass
class ProxRegularityReport:
    """Local prox-regularity diagnostic of one contact set."""

    gamma_q: float           # sqrt(2 / min_{simplex} lam^T C lam); large = degenerate
    cond2: float             # eta_max / eta_min of the contact Gram matrix
    min_quadratic: float     # achieved minimum of lam^T C lam over the simplex
    lam: np.ndarray          # achieving multipliers
    eta_q: Optional[float] = None  # r*sqrt(2)/gamma_q when a radius is supplied


def prox_regularity_diagnostic(
    contacts: Sequence[ContactConstraint],
    n_disks: int,
    radius: Optional[float] = None,
) -> ProxRegularityReport:
    """Estimate the local prox-regularity of the contact set.

    Assembles the Gram matrix C = G^T G of the contact gradient columns and
    minimizes lam^T C lam over the probability simplex; gamma_q =
    sqrt(2/min). A large gamma_q (nearly opposed gradient combinations)
    predicts slow Uzawa convergence. Also reports the 2-norm condition
    number of C (+inf when singular) and, when a radius is given, the
    local prox-regularity bound eta_q = r*sqrt(2)/gamma_q.
    """
    contacts = list(contacts)
    if not contacts:
        raise EmptyContactListError("at least one contact is required")
    m = len(contacts)
    G = np.zeros((2 * n_disks, m))
    for k, c in enumerate(contacts):
        cols, vals = c.grad_entries()
        G[cols, k] = vals
    C = G.T @ G

    min_val, lam = _simplex_min_quadratic(C)
    gamma = math.sqrt(2.0 / min_val) if min_val > 1e-300 else float("inf")

    eigs = np.linalg.eigvalsh(C)
    eig_min, eig_max = float(eigs[0]), float(eigs[-1])
    if eig_min > 1e-14 * max(eig_max, 1.0):
        cond2 = eig_max / eig_min
    else:
        cond2 = float("inf")

    eta = None
    if radius is not None:
        eta = radius * SQRT2 / gamma if math.isfinite(gamma) else 0.0
    return ProxRegularityReport(gamma, cond2, min_val, lam, eta)
