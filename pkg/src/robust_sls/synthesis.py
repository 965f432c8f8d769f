"""Robust distributed synthesis over FIR system responses.

The robust program over ``(Phi_x, Phi_u, V)`` separates by columns once the
robustness level ``gamma`` is fixed. For each column ``j`` the sub-problem
is a small QP whose variables are the admissible entries of column ``j`` of
every tap, plus one absolute-value slack per entry. ``g(gamma)`` collects
the column optima and the outer search minimizes ``g(gamma) / (1 - gamma)``
by golden-section search over ``[0, 1)``.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .core.counts import StructureCounts, structure_counts
from .core.fir import FirResponse
from .core.patterns import SparsityPattern
from .qp import QpProblem, QpStatus, solve_qp

INV_PHI = 2.0 / (1.0 + math.sqrt(5.0))
SLACK_REG = 1e-12
WORKERS_ENV = "ROBUST_SLS_WORKERS"


class SynthesisInputError(ValueError):
    pass


class MaxIterationsWarning(RuntimeWarning):
    """A column QP hit its iteration limit; the column is treated as infeasible."""


def default_alpha(L):
    return 1.2 ** (-L)


def locality_exponent(t, d, c):
    """``min(d - 1, max(0, c (t - 1)))``."""
    return min(d - 1, max(0, c * (t - 1)))


def build_constraints(supp_a, supp_b, d, c, L):
    """Per-lag supports ``Cx(1..L)``, ``Cu(1..L)``, ``Cv(0..L)`` and counts.

    ``d=None`` removes the locality and delay constraints (dense supports).
    """
    if L < 1 or (d is not None and (d < 1 or c < 1)):
        raise SynthesisInputError("need L >= 1, d >= 1, c >= 1")
    n, m = supp_a.rows, supp_b.cols
    Cx, Cu = [], []
    for t in range(1, L + 1):
        if d is None:
            px = SparsityPattern.full(n, n)
            pu = SparsityPattern.full(m, n)
        else:
            px = supp_a.power(locality_exponent(t, d, c))
            pu = supp_b.T @ px
        Cx.append(px)
        Cu.append(pu)
    Cv = [SparsityPattern.identity(n)]
    Cv += [(supp_a @ px) | (supp_b @ pu) for px, pu in zip(Cx, Cu)]
    ab = SparsityPattern.from_dense(np.hstack([supp_a.to_dense(), supp_b.to_dense()]))
    counts = structure_counts(ab, list(zip(Cx, Cu)), Cv)
    return Cx, Cu, Cv, counts


@dataclass(frozen=True)
class SynthesisProblem:
    """Input to the robust FIR program (immutable).

    Use :meth:`from_plant` to derive the supports from ``(d, c)``.
    ``v_exponent`` is the power of ``k_v`` in the V budget (``-1`` by
    default).
    """

    Ahat: np.ndarray
    Bhat: np.ndarray
    eps_bar: float
    alpha: float
    L: int
    Cx: tuple
    Cu: tuple
    Cv: tuple
    counts: StructureCounts
    Q: np.ndarray = None
    R: np.ndarray = None
    eta1: float = 1e-3
    eta2: float = 1e-6
    v_exponent: float = -1.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        A = np.array(self.Ahat, dtype=float)
        B = np.array(self.Bhat, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n, m = B.shape
        if A.shape != (n, n):
            raise SynthesisInputError("Ahat and Bhat are not conformable")
        Q = np.eye(n) if self.Q is None else np.array(self.Q, dtype=float)
        R = np.eye(m) if self.R is None else np.array(self.R, dtype=float)
        for name, val in (("Ahat", A), ("Bhat", B), ("Q", Q), ("R", R)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if not 0.0 < self.alpha < 1.0:
            raise SynthesisInputError("alpha must lie in (0, 1)")
        if self.L < 1 or self.eps_bar < 0:
            raise SynthesisInputError("need L >= 1 and eps_bar >= 0")
        object.__setattr__(self, "Cx", tuple(self.Cx))
        object.__setattr__(self, "Cu", tuple(self.Cu))
        object.__setattr__(self, "Cv", tuple(self.Cv))
        if len(self.Cx) != self.L or len(self.Cu) != self.L or len(self.Cv) != self.L + 1:
            raise SynthesisInputError("need L patterns for Cx, Cu and L+1 for Cv")
        if self.Cv[0] != SparsityPattern.identity(n):
            raise SynthesisInputError("Cv(0) must be the identity pattern")
        sa = SparsityPattern.from_matrix(A)
        sb = SparsityPattern.from_matrix(B)
        for t in range(1, self.L + 1):
            expect = (sa @ self.Cx[t - 1]) | (sb @ self.Cu[t - 1])
            if not self.Cv[t].contains(expect):
                raise SynthesisInputError(f"Cv({t}) does not cover the support of "
                                          "Ahat Cx + Bhat Cu")

    @classmethod
    def from_plant(cls, Ahat, Bhat, eps_bar, L, d=3, c=2, alpha=None, Q=None, R=None,
                   eta1=1e-3, eta2=1e-6, v_exponent=-1.0):
        Ahat = np.asarray(Ahat, dtype=float)
        Bhat = np.atleast_2d(np.asarray(Bhat, dtype=float))
        Cx, Cu, Cv, counts = build_constraints(SparsityPattern.from_matrix(Ahat),
                                               SparsityPattern.from_matrix(Bhat), d, c, L)
        alpha = default_alpha(L) if alpha is None else alpha
        return cls(Ahat, Bhat, float(eps_bar), float(alpha), int(L), Cx, Cu, Cv, counts,
                   Q, R, eta1, eta2, v_exponent)

    @property
    def n(self):
        return self.Ahat.shape[0]

    @property
    def m(self):
        return self.Bhat.shape[1]

    @property
    def response_budget_rate(self):
        """``alpha k_phi^{-1/2}``: response budget per unit ``gamma``."""
        return self.alpha / math.sqrt(self.counts.k_phi)

    @property
    def v_budget_rate(self):
        """``(1 - alpha) k_v^{v_exponent}``."""
        return (1.0 - self.alpha) * self.counts.k_v ** self.v_exponent

    def with_eps(self, eps_bar):
        return replace(self, eps_bar=float(eps_bar), _cache={})

    def to_dict(self):
        return {"n": self.n, "m": self.m, "eps_bar": self.eps_bar, "alpha": self.alpha,
                "L": self.L, "Ahat": self.Ahat.tolist(), "Bhat": self.Bhat.tolist(),
                "Q": self.Q.tolist(), "R": self.R.tolist(),
                "Cx": [p.to_dict() for p in self.Cx], "Cu": [p.to_dict() for p in self.Cu],
                "Cv": [p.to_dict() for p in self.Cv], "counts": self.counts.to_dict(),
                "eta1": self.eta1, "eta2": self.eta2, "v_exponent": self.v_exponent}

    @classmethod
    def from_dict(cls, d):
        n, m = int(d["n"]), int(d["m"])
        pats = lambda key: [SparsityPattern.from_dict(p) for p in d[key]]
        return cls(np.asarray(d["Ahat"], dtype=float).reshape(n, n),
                   np.asarray(d["Bhat"], dtype=float).reshape(n, m),
                   float(d["eps_bar"]), float(d["alpha"]), int(d["L"]),
                   pats("Cx"), pats("Cu"), pats("Cv"), StructureCounts.from_dict(d["counts"]),
                   np.asarray(d["Q"], dtype=float).reshape(n, n),
                   np.asarray(d["R"], dtype=float).reshape(m, m),
                   float(d["eta1"]), float(d["eta2"]), float(d.get("v_exponent", -1.0)))


@dataclass(frozen=True)
class ColumnStructure:
    """Column-``j`` QP data with ``h1 = h0 + gamma * hg``.

    Variable layout: response entries (lag-major, ``Phi_x`` rows then
    ``Phi_u`` rows per lag), V entries (lags ``0..L``), response slacks,
    V slacks. ``index`` lists ``(kind, lag, row)`` for every non-slack
    variable, with ``kind`` one of ``"x"``, ``"u"``, ``"v"``.
    """

    j: int
    M: sp.csr_matrix
    H1: sp.csr_matrix
    h0: np.ndarray
    hg: np.ndarray
    H2: sp.csr_matrix
    h2: np.ndarray
    index: tuple
    n_resp: int
    n_v: int
    n_slack: int
    eq_rows_per_lag: tuple
    budget_rows: tuple

    @property
    def n_vars(self):
        return self.n_resp + self.n_v + self.n_slack

    def qp(self, gamma):
        return QpProblem(self.M, self.H1, self.h0 + gamma * self.hg, self.H2, self.h2,
                         validate=False, full_row_rank=True)


def _column_rows(problem, j, reduced):
    """Per-lag row lists of column ``j`` for ``Phi_x``, ``Phi_u``, ``V``."""
    n, m = problem.n, problem.m
    if reduced:
        rx = [p.column(j) for p in problem.Cx]
        ru = [p.column(j) for p in problem.Cu]
        rv = [p.column(j) for p in problem.Cv]
    else:
        rx = [np.arange(n)] * problem.L
        ru = [np.arange(m)] * problem.L
        rv = [np.arange(n)] * (problem.L + 1)
    return rx, ru, rv


def build_column(problem, j, reduced=True):
    """Assemble the column-``j`` QP structure.

    ``reduced=False`` builds the unreduced reference: every entry of
    column ``j`` is a variable, support sets are imposed as equality rows,
    and every state row of every achievability equation is kept.
    """
    n, L = problem.n, problem.L
    A, B = problem.Ahat, problem.Bhat
    eps = problem.eps_bar
    rx, ru, rv = _column_rows(problem, j, reduced)

    # variable offsets
    index = []
    off_x, off_u, off_v = [], [], []
    pos = 0
    for t in range(L):
        off_x.append(pos)
        index += [("x", t + 1, int(i)) for i in rx[t]]
        pos += len(rx[t])
        off_u.append(pos)
        index += [("u", t + 1, int(i)) for i in ru[t]]
        pos += len(ru[t])
    n_resp = pos
    for t in range(L + 1):
        off_v.append(pos)
        index += [("v", t, int(i)) for i in rv[t]]
        pos += len(rv[t])
    n_v = pos - n_resp
    use_resp_slack = eps > 0.0
    n_s = n_resp if use_resp_slack else 0
    n_slack = n_s + n_v
    d = n_resp + n_v + n_slack

    # quadratic cost 2 * blockdiag(Q_sub, R_sub) on response coordinates
    Mr, Mc, Mv = [], [], []
    for t in range(L):
        for rows, off, W in ((rx[t], off_x[t], problem.Q), (ru[t], off_u[t], problem.R)):
            if len(rows) == 0:
                continue
            blk = 2.0 * W[np.ix_(rows, rows)]
            ii, jj = np.nonzero(blk)
            Mr.append(ii + off)
            Mc.append(jj + off)
            Mv.append(blk[ii, jj])
    reg = np.arange(n_resp, d)
    Mr.append(reg)
    Mc.append(reg)
    Mv.append(np.full(reg.size, SLACK_REG))
    M = sp.csr_matrix((np.concatenate(Mv), (np.concatenate(Mr), np.concatenate(Mc))),
                      shape=(d, d))

    # achievability equalities, block e = 0..L with n rows each
    er, ec, ev = [], [], []

    def add(block, rows, cols, vals):
        er.append(block * n + np.asarray(rows))
        ec.append(np.asarray(cols))
        ev.append(np.asarray(vals, dtype=float))

    def add_product(block, Mat, rows, off, sign):
        # sign * Mat[:, rows] applied to the variables at off..off+len(rows)
        if len(rows) == 0:
            return
        sub = Mat[:, rows]
        ii, kk = np.nonzero(sub)
        add(block, ii, off + kk, sign * sub[ii, kk])

    h2_full = np.zeros(n * (L + 1))
    h2_full[j] = 1.0
    # Phi_x(1) - V(0) = e_j
    add(0, rx[0], off_x[0] + np.arange(len(rx[0])), np.ones(len(rx[0])))
    add(0, rv[0], off_v[0] + np.arange(len(rv[0])), -np.ones(len(rv[0])))
    for t in range(1, L + 1):
        # block t: Phi_x(t+1) - A Phi_x(t) - B Phi_u(t) - V(t) = 0 (no Phi_x(L+1))
        sign = -1.0 if t < L else 1.0
        if t < L:
            add(t, rx[t], off_x[t] + np.arange(len(rx[t])), np.ones(len(rx[t])))
        add_product(t, A, rx[t - 1], off_x[t - 1], sign)
        add_product(t, B, ru[t - 1], off_u[t - 1], sign)
        add(t, rv[t], off_v[t] + np.arange(len(rv[t])), sign * np.ones(len(rv[t])))
    er = np.concatenate(er)
    ec = np.concatenate(ec)
    ev = np.concatenate(ev)
    keep = ev != 0.0
    er, ec, ev = er[keep], ec[keep], ev[keep]
    H2_full = sp.csr_matrix((ev, (er, ec)), shape=(n * (L + 1), d))
    if reduced:
        touched = np.unique(er)
        if h2_full[j] != 0 and j not in touched:
            touched = np.union1d(touched, [j])
    else:
        touched = np.arange(n * (L + 1))
    H2 = H2_full[touched]
    h2 = h2_full[touched]
    eq_rows = tuple(int(np.sum((touched >= b * n) & (touched < (b + 1) * n)))
                    for b in range(L + 1))
    if not reduced:
        # support sets as explicit equality rows
        outside = []
        for t in range(L):
            outside += [off_x[t] + int(i) for i in np.setdiff1d(np.arange(n),
                                                                 problem.Cx[t].column(j))]
            outside += [off_u[t] + int(i) for i in np.setdiff1d(np.arange(problem.m),
                                                                 problem.Cu[t].column(j))]
        for t in range(L + 1):
            outside += [off_v[t] + int(i) for i in np.setdiff1d(np.arange(n),
                                                                 problem.Cv[t].column(j))]
        if outside:
            S = sp.csr_matrix((np.ones(len(outside)), (np.arange(len(outside)), outside)),
                              shape=(len(outside), d))
            H2 = sp.vstack([H2, S]).tocsr()
            h2 = np.concatenate([h2, np.zeros(len(outside))])

    # |.| linearization and budgets
    rows, cols, vals = [], [], []
    h0, hg = [], []
    r = 0

    def abs_rows(var0, slack0, count):
        nonlocal r
        k = np.arange(count)
        # var - slack <= 0 and -var - slack <= 0
        rows.extend([r + 2 * k, r + 2 * k, r + 2 * k + 1, r + 2 * k + 1])
        cols.extend([var0 + k, slack0 + k, var0 + k, slack0 + k])
        vals.extend([np.ones(count), -np.ones(count), -np.ones(count), -np.ones(count)])
        h0.append(np.zeros(2 * count))
        hg.append(np.zeros(2 * count))
        r += 2 * count

    s0 = n_resp + n_v
    budget_rows = []
    if use_resp_slack:
        abs_rows(0, s0, n_resp)
        rows.append(np.full(n_resp, r))
        cols.append(s0 + np.arange(n_resp))
        vals.append(np.ones(n_resp))
        h0.append(np.zeros(1))
        hg.append(np.array([problem.response_budget_rate / eps]))
        budget_rows.append(r)
        r += 1
    v0 = n_resp + n_v + n_s
    abs_rows(n_resp, v0, n_v)
    rows.append(np.full(n_v, r))
    cols.append(v0 + np.arange(n_v))
    vals.append(np.ones(n_v))
    h0.append(np.zeros(1))
    hg.append(np.array([problem.v_budget_rate]))
    budget_rows.append(r)
    r += 1
    H1 = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(r, d))
    return ColumnStructure(j, M, H1, np.concatenate(h0), np.concatenate(hg), H2, h2,
                           tuple(index), n_resp, n_v, n_slack, eq_rows, tuple(budget_rows))


def column_structures(problem):
    """Reduced structures for every column, built once and cached."""
    if "columns" not in problem._cache:
        problem._cache["columns"] = [build_column(problem, j) for j in range(problem.n)]
    return problem._cache["columns"]


def build_subproblem(problem, j, gamma, reduced=True):
    """``(QpProblem, index)`` for column ``j`` at level ``gamma``."""
    if not 0 <= j < problem.n:
        raise SynthesisInputError(f"column {j} out of range")
    if gamma < 0:
        raise SynthesisInputError("gamma must be nonnegative")
    st = column_structures(problem)[j] if reduced else build_column(problem, j, False)
    return st.qp(gamma), st.index


def column_gamma0(problem, j, tol=1e-9):
    """Smallest ``gamma`` for which column ``j`` is feasible (an LP)."""
    st = column_structures(problem)[j]
    d = st.n_vars
    H1 = sp.hstack([st.H1, sp.csr_matrix(-st.hg.reshape(-1, 1))]).tocsr()
    H2 = sp.hstack([st.H2, sp.csr_matrix((st.H2.shape[0], 1))]).tocsr()
    q = np.zeros(d + 1)
    q[-1] = 1.0
    lp = QpProblem(sp.csr_matrix((d + 1, d + 1)), H1, st.h0, H2, st.h2, q=q,
                   validate=False, full_row_rank=True)
    sol = solve_qp(lp, feas_tol=tol, gap_tol=tol, max_iter=200)
    if not sol.optimal:
        return math.inf
    return max(float(sol.x[-1]), 0.0)


def gamma0(problem):
    """Per-column feasibility thresholds (cached)."""
    if "gamma0" not in problem._cache:
        problem._cache["gamma0"] = np.array([column_gamma0(problem, j)
                                             for j in range(problem.n)])
    return problem._cache["gamma0"]


@dataclass
class ColumnResult:
    j: int
    status: str
    g2: float
    x: np.ndarray = None
    iterations: int = 0
    code: str = ""


def _solve_column(problem, st, gamma, gap_tol, g0):
    if gamma < g0 * (1.0 - 1e-7) - 1e-10:
        return ColumnResult(st.j, "infeasible", math.inf, code="below_gamma0")
    sol = solve_qp(st.qp(gamma), feas_tol=1e-9, gap_tol=gap_tol, max_iter=200)
    if sol.status is QpStatus.OPTIMAL:
        x = sol.x
        g2 = float(0.5 * x[:st.n_resp] @ (st.M[:st.n_resp, :st.n_resp] @ x[:st.n_resp]))
        return ColumnResult(st.j, "optimal", g2, x, sol.iterations)
    if sol.status is QpStatus.MAX_ITERATIONS:
        return ColumnResult(st.j, "infeasible", math.inf, sol.x, sol.iterations,
                            code="max_iterations")
    return ColumnResult(st.j, "infeasible", math.inf, None, sol.iterations, code="infeasible")


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def eval_g(problem, gamma, eta2=None, workers=None):
    """``g(gamma)`` and the per-column results (``+inf`` if any column fails).

    Columns are solved to ``gap_tol = eta2 / n`` (floored at ``1e-10``).
    A column whose QP hits the iteration limit is reported infeasible with
    a :class:`MaxIterationsWarning`. Results are always in column order.
    """
    eta2 = problem.eta2 if eta2 is None else eta2
    gap_tol = max(eta2 / problem.n, 1e-10)
    structs = column_structures(problem)
    g0 = gamma0(problem)
    if gamma >= 1.0 and np.any(g0 > gamma):
        return math.inf, [ColumnResult(j, "infeasible", math.inf, code="below_gamma0")
                          for j in range(problem.n)]
    task = lambda st: _solve_column(problem, st, gamma, gap_tol, g0[st.j])
    nw = _workers(workers)
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            cols = list(ex.map(task, structs))
    else:
        cols = [task(st) for st in structs]
    if any(c.code == "max_iterations" for c in cols):
        warnings.warn(f"column QP hit the iteration limit at gamma={gamma:.6g}",
                      MaxIterationsWarning, stacklevel=2)
    if any(c.status != "optimal" for c in cols):
        return math.inf, cols
    return math.sqrt(sum(c.g2 for c in cols)), cols


def golden_section(F, eta1, trace=None):
    """Golden-section minimization of ``F`` over ``[0, 1]``.

    The probe that survives a bracket update is reused, so each iteration
    costs one new evaluation. ``trace`` (a list) receives one row per
    iteration. Returns the midpoint of the final bracket.
    """
    a, b = 0.0, 1.0
    c, d = 1.0 - INV_PHI, INV_PHI
    fc, fd = F(c), F(d)
    it = 0
    while abs(b - a) > eta1:
        if trace is not None:
            trace.append({"iter": it, "gamma_a": a, "gamma_b": b, "gamma_c": c,
                          "gamma_d": d, "F_c": fc, "F_d": fd})
        if fc < fd:
            b = d
            d, fd = c, fc
            c = b - INV_PHI * (b - a)
            fc = F(c)
        else:
            a = c
            c, fc = d, fd
            d = a + INV_PHI * (b - a)
            fd = F(d)
        it += 1
    if trace is not None:
        trace.append({"iter": it, "gamma_a": a, "gamma_b": b, "gamma_c": c,
                      "gamma_d": d, "F_c": fc, "F_d": fd})
    return 0.5 * (a + b), it


def max_golden_iterations(eta1):
    return math.ceil(math.log(1.0 / eta1) / math.log(1.0 / INV_PHI)) + 1


@dataclass
class SynthesisSolution:
    """Result of the robust synthesis.

    ``certificate`` holds the per-column budgets actually used
    (``response_budgets`` with the design ``eps_bar``, ``v_budgets``), the
    counts ``k_phi``, ``k_v`` and the stability bound evaluated at the
    design ``eps_bar``.
    """

    status: str
    gamma_bar: float
    phi_x: FirResponse = None
    phi_u: FirResponse = None
    v: FirResponse = None
    g: float = math.inf
    scaled_objective: float = math.inf
    column_objectives: np.ndarray = None
    certificate: dict = field(default_factory=dict)
    eps_bar: float = 0.0
    evaluations: int = 0
    iterations: int = 0
    trace: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.status == "feasible"

    def to_dict(self):
        out = {"status": self.status, "gamma_bar": self.gamma_bar, "g": self.g,
               "scaled_objective": self.scaled_objective, "eps_bar": self.eps_bar,
               "evaluations": self.evaluations, "iterations": self.iterations}
        if self.feasible:
            out.update(phi_x=self.phi_x.to_dict(), phi_u=self.phi_u.to_dict(),
                       v=self.v.to_dict(),
                       column_objectives=self.column_objectives.tolist(),
                       certificate={k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                    for k, v in self.certificate.items()})
        return out

    @classmethod
    def from_dict(cls, d):
        sol = cls(d["status"], float(d["gamma_bar"]), g=float(d["g"]),
                  scaled_objective=float(d["scaled_objective"]),
                  eps_bar=float(d.get("eps_bar", 0.0)),
                  evaluations=int(d.get("evaluations", 0)),
                  iterations=int(d.get("iterations", 0)))
        if sol.feasible:
            sol.phi_x = FirResponse.from_dict(d["phi_x"])
            sol.phi_u = FirResponse.from_dict(d["phi_u"])
            sol.v = FirResponse.from_dict(d["v"])
            sol.column_objectives = np.asarray(d["column_objectives"], dtype=float)
            sol.certificate = {k: (np.asarray(v) if isinstance(v, list) else v)
                               for k, v in d["certificate"].items()}
        return sol


def assemble(problem, cols):
    """Fill FIR taps from the column solutions."""
    n, m, L = problem.n, problem.m, problem.L
    X = np.zeros((L, n, n))
    U = np.zeros((L, m, n))
    V = np.zeros((L + 1, n, n))
    structs = column_structures(problem)
    for col, st in zip(cols, structs):
        x = col.x
        for k, (kind, lag, row) in enumerate(st.index):
            if kind == "x":
                X[lag - 1, row, col.j] = x[k]
            elif kind == "u":
                U[lag - 1, row, col.j] = x[k]
            else:
                V[lag, row, col.j] = x[k]
    phi_x = FirResponse(list(X), 1, problem.Cx)
    phi_u = FirResponse(list(U), 1, problem.Cu)
    v = FirResponse(list(V), 0, problem.Cv)
    return phi_x, phi_u, v


def budgets(phi_x, phi_u, v, eps):
    """Per-column response budgets (scaled by ``eps``) and V budgets."""
    resp = eps * (np.abs(phi_x.stacked()).sum(axis=(0, 1))
                  + np.abs(phi_u.stacked()).sum(axis=(0, 1)))
    return resp, np.abs(v.stacked()).sum(axis=(0, 1))


def stability_bound(resp, vb, k_phi, k_v):
    """``sqrt(k_phi) max_j resp_j + sqrt(k_v) max_j vb_j``."""
    return float(math.sqrt(k_phi) * resp.max(initial=0.0)
                 + math.sqrt(k_v) * vb.max(initial=0.0))


def _solution(problem, gamma, g, cols, evals, iters, trace):
    phi_x, phi_u, v = assemble(problem, cols)
    resp, vb = budgets(phi_x, phi_u, v, problem.eps_bar)
    cert = {"response_budgets": resp, "v_budgets": vb,
            "response_limit": problem.response_budget_rate * gamma,
            "v_limit": problem.v_budget_rate * gamma,
            "k_phi": problem.counts.k_phi, "k_v": problem.counts.k_v, "k": problem.counts.k,
            "k_shared": problem.counts.k_shared,
            "bound": stability_bound(resp, vb, problem.counts.k_phi, problem.counts.k_v)}
    gj = np.sqrt(np.array([c.g2 for c in cols]))
    return SynthesisSolution("feasible", gamma, phi_x, phi_u, v, g, g / (1.0 - gamma), gj,
                             cert, problem.eps_bar, evals, iters, trace)


def golden_section_synthesize(problem, eta1=None, eta2=None, workers=None, trace_path=None):
    """Minimize ``g(gamma) / (1 - gamma)`` over ``[0, 1)`` by golden-section search.

    Returns an infeasible :class:`SynthesisSolution` when ``g(1)`` is
    infinite or when the final midpoint turns out infeasible.
    """
    eta1 = problem.eta1 if eta1 is None else eta1
    eta2 = problem.eta2 if eta2 is None else eta2
    if eta2 > eta1 ** 2:
        warnings.warn(f"eta2={eta2:g} exceeds eta1^2={eta1 ** 2:g}", stacklevel=2)
    evals = 0
    g1, _ = eval_g(problem, 1.0, eta2, workers)
    evals += 1
    trace = []
    if not math.isfinite(g1):
        return SynthesisSolution("infeasible", 1.0, evaluations=evals, eps_bar=problem.eps_bar)
    cache = {}

    def F(gamma):
        nonlocal evals
        if gamma not in cache:
            g, _ = eval_g(problem, gamma, eta2, workers)
            evals += 1
            cache[gamma] = g / (1.0 - gamma) if math.isfinite(g) else math.inf
        return cache[gamma]

    gamma_bar, iters = golden_section(F, eta1, trace)
    g, cols = eval_g(problem, gamma_bar, eta2, workers)
    evals += 1
    if trace_path is not None:
        write_trace(trace, trace_path)
    if not math.isfinite(g):
        return SynthesisSolution("infeasible", gamma_bar, evaluations=evals, iterations=iters,
                                 trace=trace, eps_bar=problem.eps_bar)
    return _solution(problem, gamma_bar, g, cols, evals, iters, trace)


def nominal_distributed_synthesize(problem, **kw):
    """The same program with ``eps_bar = 0`` (certainty-equivalent design)."""
    return golden_section_synthesize(problem.with_eps(0.0), **kw)


def write_trace(trace, path):
    keys = ["iter", "gamma_a", "gamma_b", "gamma_c", "gamma_d", "F_c", "F_d"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in trace:
            w.writerow(row)


def build_full_qp(problem, gamma):
    """The whole program at fixed ``gamma`` as one QP (reference route).

    Variables are ``vec`` of every tap (column-major), built with Kronecker
    products; supports are equality rows. Returns ``(QpProblem, layout)``.
    """
    n, m, L = problem.n, problem.m, problem.L
    A, B = problem.Ahat, problem.Bhat
    eps = problem.eps_bar
    I_n = sp.identity(n, format="csr")
    nx, nu = n * n, m * n
    # offsets: Phi_x(t), Phi_u(t) for t=1..L, then V(0..L)
    ox = [t * (nx + nu) for t in range(L)]
    ou = [t * (nx + nu) + nx for t in range(L)]
    n_resp = L * (nx + nu)
    ov = [n_resp + t * nx for t in range(L + 1)]
    n_core = n_resp + (L + 1) * nx
    use_s = eps > 0
    d = n_core + (n_resp if use_s else 0) + (L + 1) * nx

    def place(blocks, rows):
        # blocks: list of (offset, matrix) placed into a row band
        mats = []
        for off, Mat in blocks:
            Mat = sp.csr_matrix(Mat)
            mats.append(sp.hstack([sp.csr_matrix((rows, off)), Mat,
                                   sp.csr_matrix((rows, d - off - Mat.shape[1]))]))
        return sum(mats[1:], mats[0])

    kA = sp.kron(I_n, A)
    kB = sp.kron(I_n, B)
    I_x = sp.identity(nx)
    eqs = [place([(ox[0], I_x), (ov[0], -I_x)], nx)]
    rhs = [np.eye(n).ravel(order="F")]
    for t in range(1, L):
        eqs.append(place([(ox[t], I_x), (ox[t - 1], -kA), (ou[t - 1], -kB), (ov[t], -I_x)], nx))
        rhs.append(np.zeros(nx))
    eqs.append(place([(ox[L - 1], kA), (ou[L - 1], kB), (ov[L], I_x)], nx))
    rhs.append(np.zeros(nx))
    # supports
    sup = []
    for t in range(L):
        for off, pat in ((ox[t], problem.Cx[t]), (ou[t], problem.Cu[t])):
            mask = ~pat.to_dense().ravel(order="F")
            sup += list(off + np.flatnonzero(mask))
    for t in range(L + 1):
        mask = ~problem.Cv[t].to_dense().ravel(order="F")
        sup += list(ov[t] + np.flatnonzero(mask))
    S = sp.csr_matrix((np.ones(len(sup)), (np.arange(len(sup)), sup)), shape=(len(sup), d))
    H2 = sp.vstack(eqs + [S]).tocsr()
    h2 = np.concatenate(rhs + [np.zeros(len(sup))])

    # cost 2 * blockdiag(kron(I, Q), kron(I, R)) per lag
    blocks = []
    for t in range(L):
        blocks += [2.0 * sp.kron(I_n, problem.Q), 2.0 * sp.kron(I_n, problem.R)]
    blocks.append(SLACK_REG * sp.identity(d - n_resp))
    M = sp.block_diag(blocks).tocsr()

    # |.| rows and per-column budgets
    rows, cols, vals, h1 = [], [], [], []
    r = 0

    def abs_block(v0, s0, count):
        nonlocal r
        k = np.arange(count)
        rows.extend([r + 2 * k, r + 2 * k, r + 2 * k + 1, r + 2 * k + 1])
        cols.extend([v0 + k, s0 + k, v0 + k, s0 + k])
        vals.extend([np.ones(count), -np.ones(count), -np.ones(count), -np.ones(count)])
        h1.append(np.zeros(2 * count))
        r += 2 * count

    def col_of(offsets, size, height, j):
        # global indices of column j of each tap
        return np.concatenate([off + j * height + np.arange(height) for off in offsets])

    s_base = n_core
    v_slack = n_core + (n_resp if use_s else 0)
    if use_s:
        abs_block(0, s_base, n_resp)
        for j in range(n):
            idx = np.concatenate([col_of(ox, nx, n, j), col_of(ou, nu, m, j)])
            rows.append(np.full(idx.size, r))
            cols.append(s_base + idx)
            vals.append(np.ones(idx.size))
            h1.append(np.array([gamma * problem.response_budget_rate / eps]))
            r += 1
    abs_block(n_resp, v_slack, (L + 1) * nx)
    for j in range(n):
        idx = col_of(ov, nx, n, j) - n_resp
        rows.append(np.full(idx.size, r))
        cols.append(v_slack + idx)
        vals.append(np.ones(idx.size))
        h1.append(np.array([gamma * problem.v_budget_rate]))
        r += 1
    H1 = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(r, d))
    layout = {"ox": ox, "ou": ou, "ov": ov, "n_resp": n_resp}
    return QpProblem(M, H1, np.concatenate(h1), H2, h2, validate=False), layout


def full_g(problem, gamma, gap_tol=1e-10):
    """``g(gamma)`` from the single full QP (``+inf`` when infeasible)."""
    qp, layout = build_full_qp(problem, gamma)
    sol = solve_qp(qp, feas_tol=1e-9, gap_tol=gap_tol, max_iter=300)
    if not sol.optimal:
        return math.inf
    k = layout["n_resp"]
    x = sol.x[:k]
    return math.sqrt(max(0.5 * x @ (qp.M[:k, :k] @ x), 0.0))
