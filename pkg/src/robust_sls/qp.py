"""Dense/sparse convex quadratic programming.

Solves ::

    minimize    1/2 x' M x + q' x
    subject to  H1 x <= h1
                H2 x  = h2

with a Mehrotra predictor-corrector primal-dual interior-point method on
the sparse augmented KKT system. Everything is deterministic: fixed
orderings, no randomized steps, so identical inputs give bitwise identical
iterates.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-8
MIN_TOL = 1e-10


class QpInputError(ValueError):
    """Malformed or non-convex QP data."""


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


def _as_csr(A, rows, cols):
    if A is None:
        return sp.csr_matrix((rows, cols))
    A = sp.csr_matrix(A, dtype=float)
    if A.shape != (rows, cols):
        raise QpInputError(f"constraint matrix has shape {A.shape}, expected ({rows}, {cols})")
    return A


def _as_vec(v, size, name):
    if v is None:
        return np.zeros(size)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise QpInputError(f"{name} has length {v.size}, expected {size}")
    return v


@dataclass
class QpProblem:
    """QP data. Matrices may be dense arrays or ``scipy.sparse`` matrices.

    ``q`` defaults to zero (pure quadratic objective). Set ``validate=False``
    to skip the symmetry/PSD checks when ``M`` is PSD by construction.
    ``full_row_rank=True`` skips the dependent-equality scan.
    """

    M: object
    H1: object = None
    h1: object = None
    H2: object = None
    h2: object = None
    q: object = None
    validate: bool = True
    full_row_rank: bool = False

    def __post_init__(self):
        M = self.M
        if sp.issparse(M):
            M = sp.csr_matrix(M, dtype=float)
        else:
            M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise QpInputError(f"M must be square, got shape {M.shape}")
        d = M.shape[0]
        h1 = None if self.h1 is None else np.asarray(self.h1, dtype=float).ravel()
        h2 = None if self.h2 is None else np.asarray(self.h2, dtype=float).ravel()
        m1 = 0 if h1 is None else h1.size
        m2 = 0 if h2 is None else h2.size
        self.H1 = _as_csr(self.H1, m1, d)
        self.H2 = _as_csr(self.H2, m2, d)
        self.h1 = _as_vec(h1, m1, "h1")
        self.h2 = _as_vec(h2, m2, "h2")
        self.q = _as_vec(self.q, d, "q")
        self.M = sp.csr_matrix(M)
        if self.validate:
            dense = self.M.toarray()
            if np.abs(dense - dense.T).max(initial=0.0) > 1e-10:
                raise QpInputError("M is not symmetric within 1e-10")
            if d and np.linalg.eigvalsh(0.5 * (dense + dense.T)).min() < -1e-8:
                raise QpInputError("M is not positive semidefinite")

    @property
    def dim(self):
        return self.M.shape[0]

    def objective(self, x):
        return float(0.5 * x @ (self.M @ x) + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    residuals: dict
    y: np.ndarray = None
    z: np.ndarray = None
    s: np.ndarray = None
    certificate: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status is QpStatus.OPTIMAL


def _dependent_rows(H, h, tol=1e-10):
    """Indices of rows to keep after a rank-revealing QR, and consistency."""
    dense = H.toarray()
    if dense.shape[0] == 0:
        return np.arange(0), True
    _, R, piv = la.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > tol * scale))
    keep = np.sort(piv[:rank])
    if rank == dense.shape[0]:
        return keep, True
    # consistency of the removed rows
    Hk = dense[keep]
    coef, *_ = np.linalg.lstsq(Hk.T, dense.T, rcond=None)
    consistent = np.allclose(coef.T @ h[keep], h, atol=1e-8 * (1 + np.abs(h).max()))
    return keep, consistent


def _infeasible(d, reason, **cert):
    cert["reason"] = reason
    return QpSolution(np.zeros(d), np.inf, QpStatus.INFEASIBLE, 0,
                      {"primal": np.inf, "dual": np.inf, "gap": np.inf}, certificate=cert)


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qp(problem, feas_tol=DEFAULT_TOL, gap_tol=DEFAULT_TOL, max_iter=100):
    """Solve a convex QP to the requested feasibility and gap tolerances.

    Returns a :class:`QpSolution`. ``status`` is ``OPTIMAL`` only when the
    equality/inequality violation is at most ``feas_tol`` and ``s'z`` is at
    most ``gap_tol``. ``INFEASIBLE`` carries a normalized Farkas certificate
    ``(y, z)`` in ``certificate`` when one was found; otherwise the record
    explains which stall rule fired.
    """
    p = problem
    feas_tol = max(float(feas_tol), MIN_TOL)
    gap_tol = max(float(gap_tol), MIN_TOL)
    d = p.dim
    M, q = p.M, p.q
    H1, h1, H2, h2 = p.H1, p.h1, p.H2, p.h2

    # structural preprocessing
    row_nnz = np.diff(H2.indptr)
    empty = row_nnz == 0
    if np.any(np.abs(h2[empty]) > feas_tol):
        return _infeasible(d, "empty equality row with nonzero right-hand side")
    eq_rows = np.flatnonzero(~empty)
    H2, h2 = H2[eq_rows], h2[eq_rows]
    if not p.full_row_rank and H2.shape[0] and H2.shape[0] * d <= 4_000_000:
        keep, consistent = _dependent_rows(H2, h2)
        if not consistent:
            return _infeasible(d, "inconsistent dependent equality rows")
        if keep.size < H2.shape[0]:
            H2, h2 = H2[keep], h2[keep]
    row_nnz = np.diff(H1.indptr)
    empty = row_nnz == 0
    if np.any(h1[empty] < -feas_tol):
        return _infeasible(d, "empty inequality row with negative right-hand side")
    ineq_rows = np.flatnonzero(~empty)
    H1_full, h1_full = H1, h1
    H1, h1 = H1[ineq_rows], h1[ineq_rows]
    m1, m2 = H1.shape[0], H2.shape[0]

    # augmented KKT pattern; only the (3,3) diagonal changes per iteration
    reg = 1e-13
    if m1:
        top = sp.hstack([M + reg * sp.eye(d), H2.T, H1.T])
        mid = sp.hstack([H2, -reg * sp.eye(m2), sp.csr_matrix((m2, m1))])
        bot = sp.hstack([H1, sp.csr_matrix((m1, m2)), -sp.eye(m1)])
        K = sp.vstack([top, mid, bot]).tocsc()
    else:
        K = sp.vstack([sp.hstack([M + reg * sp.eye(d), H2.T]),
                       sp.hstack([H2, -reg * sp.eye(m2)])]).tocsc()
    K.sort_indices()
    K.sum_duplicates()
    n_kkt = K.shape[0]
    diag_pos = None
    if m1:
        # locate the (3,3) diagonal inside the CSC data array
        base = d + m2
        diag_pos = np.empty(m1, dtype=np.int64)
        for k in range(m1):
            col = base + k
            start, stop = K.indptr[col], K.indptr[col + 1]
            rows = K.indices[start:stop]
            diag_pos[k] = start + int(np.searchsorted(rows, col))
    dense_kkt = n_kkt <= 250

    def factor():
        if dense_kkt:
            lu = la.lu_factor(K.toarray(), check_finite=False)
            return lambda r: la.lu_solve(lu, r, check_finite=False)
        # minimum-degree ordering on K + K' keeps the fill low for these
        # quasi-definite systems; mild threshold pivoting keeps it stable
        try:
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                           options={"SymmetricMode": True})
        except RuntimeError:
            lu = spla.splu(K + 1e-10 * sp.eye(n_kkt, format="csc"), permc_spec="COLAMD")
        return lu.solve

    def solve(fac, rhs):
        sol = fac(rhs)
        # one step of iterative refinement against the stored matrix
        sol += fac(rhs - K @ sol)
        return sol

    def split(v):
        return v[:d], v[d:d + m2], v[d + m2:]

    # initial point (shifted solution of the identity-scaled KKT system)
    if m1:
        K.data[diag_pos] = -1.0
    fac = factor()
    x, y, zt = split(solve(fac, np.concatenate([-q, h2, h1])))
    if m1:
        s = -zt.copy()
        z = zt.copy()
        ap = -s.min()
        s = s if ap < 0 else s + 1.0 + ap
        ad = -z.min()
        z = z if ad < 0 else z + 1.0 + ad
    else:
        s = z = np.zeros(0)

    h_scale = 1.0 + max(np.abs(h1).max(initial=0.0), np.abs(h2).max(initial=0.0))
    status = QpStatus.MAX_ITERATIONS
    history = []
    cert = {}
    it = 0
    for it in range(1, max_iter + 1):
        Mx = M @ x
        r_d = Mx + q + H2.T @ y + H1.T @ z
        r_p = H2 @ x - h2
        r_i = H1 @ x + s - h1
        gap = float(s @ z)
        mu = gap / m1 if m1 else 0.0
        viol = max(np.abs(r_p).max(initial=0.0), np.abs(r_i).max(initial=0.0))
        dual_res = np.abs(r_d).max(initial=0.0)
        if viol <= feas_tol and gap <= gap_tol and dual_res <= gap_tol:
            status = QpStatus.OPTIMAL
            break
        history.append(viol)

        # Farkas certificate from diverging duals
        if m1 or m2:
            nrm = np.abs(y).sum() + np.abs(z).sum()
            if nrm > 1e6 * (1.0 + np.abs(Mx).max(initial=0.0)):
                yh, zh = y / nrm, z / nrm
                val = float(h2 @ yh + h1 @ zh)
                res = np.abs(H2.T @ yh + H1.T @ zh).max(initial=0.0)
                if val < -1e-9 and res <= 1e-6 * abs(val):
                    cert = {"reason": "farkas", "y": yh, "z": zh, "value": val,
                            "residual": float(res)}
                    status = QpStatus.INFEASIBLE
                    break
        if len(history) > 30 and viol > 1e3 * feas_tol:
            if viol > 0.9 * history[-30] and np.abs(z).max(initial=0.0) > 1e8:
                cert = {"reason": "stalled primal infeasibility",
                        "primal": float(viol), "dual_norm": float(np.abs(z).max())}
                status = QpStatus.INFEASIBLE
                break

        if m1:
            K.data[diag_pos] = -s / z
        fac = factor()
        # predictor
        rhs = np.concatenate([-r_d, -r_p, -r_i + s])
        dx, dy, dz = split(solve(fac, rhs))
        ds = -s - s * dz / z if m1 else s
        if m1:
            a_aff = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m1
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            r_c = s * z + ds * dz - sigma * mu
            rhs = np.concatenate([-r_d, -r_p, -r_i + r_c / z])
            dx, dy, dz = split(solve(fac, rhs))
            ds = -(r_c + s * dz) / z
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        else:
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        if m1:
            s = s + alpha * ds
            z = z + alpha * dz

    # residuals against the original (unreduced) inequality system
    r_d = M @ x + q + H2.T @ y + H1.T @ z
    viol_eq = np.abs(p.H2 @ x - p.h2).max(initial=0.0)
    viol_in = np.maximum(H1_full @ x - h1_full, 0.0).max(initial=0.0)
    residuals = {
        "primal": float(max(viol_eq, viol_in)),
        "dual": float(np.abs(r_d).max(initial=0.0)),
        "gap": float(s @ z) if m1 else 0.0,
        "complementarity": float(np.abs(s * z).max(initial=0.0)) if m1 else 0.0,
        "scale": h_scale,
    }
    z_full = np.zeros(H1_full.shape[0])
    z_full[ineq_rows] = z
    if status is QpStatus.INFEASIBLE:
        return QpSolution(x, np.inf, status, it, residuals, y, z_full, s, cert)
    return QpSolution(x, p.objective(x), status, it, residuals, y, z_full, s, cert)


def solve_strictly_convex_eq_qp(M, H, h):
    """Unique minimizer of ``1/2 x'Mx`` subject to ``Hx = h`` (KKT solve).

    Dependent rows of ``H`` are removed with a warning; an inconsistent
    system raises ``QpInputError``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    d = M.shape[0]
    if H.shape[1] != d or H.shape[0] != h.size:
        raise QpInputError("H and h do not conform with M")
    keep, consistent = _dependent_rows(sp.csr_matrix(H), h)
    if not consistent:
        raise QpInputError("equality constraints are inconsistent")
    if keep.size < H.shape[0]:
        warnings.warn(f"removed {H.shape[0] - keep.size} dependent equality rows",
                      stacklevel=2)
        H, h = H[keep], h[keep]
    p = H.shape[0]
    K = np.block([[M, H.T], [H, np.zeros((p, p))]])
    sol = la.solve(K, np.concatenate([np.zeros(d), h]))
    return sol[:d]
