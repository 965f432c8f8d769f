"""Sparse identification of ``(A, B)`` from a single trajectory.

Each state row ``i`` is an independent Lasso problem ::

    min_psi  1/(2N) sum_t (x_i(t+1) - z(t)' psi)^2 + lam ||psi||_1

with regressors ``z(t) = [x(t); u(t)]`` over the pairs ``t = 1..T-1`` and
``N = T - 2`` (the horizon length ``t2 - t1``). Solved by cyclic coordinate
descent on the Gram matrix with an active-set strategy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .core.patterns import SparsityPattern

HARD_ZERO = 1e-10


class LassoInputError(ValueError):
    pass


def soft_threshold(x, t):
    """``sign(x) * max(|x| - t, 0)``."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@numba.njit(cache=True)
def _sweep(G, c, lam, beta, grad, idx, count):
    # one cyclic pass over idx[:count]; grad = G beta - c is kept current
    dmax = 0.0
    for q in range(count):
        k = idx[q]
        gkk = G[k, k]
        if gkk <= 0.0:
            continue
        old = beta[k]
        rho = gkk * old - grad[k]
        if rho > lam:
            new = (rho - lam) / gkk
        elif rho < -lam:
            new = (rho + lam) / gkk
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            beta[k] = new
            for r in range(G.shape[0]):
                grad[r] += delta * G[r, k]
            # coefficient change, scaled up by curvature so it also bounds
            # the coordinate's subgradient residual
            step = abs(delta) * max(1.0, gkk)
            if step > dmax:
                dmax = step
    return dmax


@numba.njit(cache=True)
def _cd_row(G, c, lam, beta, tol, max_iter):
    p = G.shape[0]
    grad = G @ beta - c
    full = np.arange(p)
    active = np.empty(p, dtype=np.int64)
    it = 0
    while it < max_iter:
        dmax = _sweep(G, c, lam, beta, grad, full, p)
        it += 1
        if dmax <= tol:
            return it, True
        # iterate on the current active set until it settles
        na = 0
        for k in range(p):
            if beta[k] != 0.0:
                active[na] = k
                na += 1
        while it < max_iter:
            d = _sweep(G, c, lam, beta, grad, active, na)
            it += 1
            if d <= tol:
                break
    return it, False


@numba.njit(cache=True)
def _cd_all(G, C, lam, B0, tol, max_iter):
    p, n = C.shape
    out = B0.copy()
    iters = np.zeros(n, dtype=np.int64)
    conv = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        beta = out[:, i].copy()
        it, ok = _cd_row(G, C[:, i], lam, beta, tol, max_iter)
        out[:, i] = beta
        iters[i] = it
        conv[i] = ok
    return out, iters, conv


@dataclass(frozen=True)
class LassoEstimate:
    """Result of :func:`lasso_fit`.

    ``psi`` is ``[Ahat Bhat]'``; ``support`` is the pattern of ``[Ahat Bhat]``.
    """

    Ahat: np.ndarray
    Bhat: np.ndarray
    lam: float
    support: SparsityPattern
    iterations: np.ndarray
    converged: np.ndarray
    kkt_residual: np.ndarray

    @property
    def psi(self):
        return np.hstack([self.Ahat, self.Bhat]).T

    @property
    def all_converged(self):
        return bool(np.all(self.converged))

    def to_dict(self):
        return {"n": self.Ahat.shape[0], "m": self.Bhat.shape[1], "lambda": self.lam,
                "Ahat": self.Ahat.tolist(), "Bhat": self.Bhat.tolist(),
                "support": self.support.to_dict(),
                "iterations": self.iterations.tolist(),
                "converged": [bool(c) for c in self.converged],
                "kkt_residual": self.kkt_residual.tolist()}

    @classmethod
    def from_dict(cls, d):
        n, m = int(d["n"]), int(d["m"])
        return cls(np.asarray(d["Ahat"], dtype=float).reshape(n, n),
                   np.asarray(d["Bhat"], dtype=float).reshape(n, m), float(d["lambda"]),
                   SparsityPattern.from_dict(d["support"]),
                   np.asarray(d["iterations"], dtype=np.int64),
                   np.asarray(d["converged"], dtype=bool),
                   np.asarray(d["kkt_residual"], dtype=float))


def regression_data(traj, first=1, last=None):
    """Regressors ``Z`` and targets ``Y`` for the pairs ``t = first..last``."""
    last = traj.T - 1 if last is None else last
    X, U = traj.states, traj.inputs
    Z = np.hstack([X[first:last + 1], U[first:last + 1]])
    Y = X[first + 1:last + 2]
    return Z, Y


def _normalizer(T):
    return max(T - 2, 1)


def lasso_solve(Z, Y, lam, norm=None, tol=1e-8, max_iter=100_000, warm_start=None):
    """Row-separable Lasso on explicit data; returns ``(psi, iters, conv, kkt)``."""
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if lam < 0:
        raise LassoInputError("lambda must be nonnegative")
    N = float(norm if norm is not None else Z.shape[0])
    G = Z.T @ Z / N
    C = Z.T @ Y / N
    dead = np.diag(G) <= 1e-14 * max(1.0, np.abs(np.diag(G)).max(initial=0.0))
    if np.any(dead):
        warnings.warn(f"zero-variance regressors {np.flatnonzero(dead).tolist()} set to 0",
                      stacklevel=3)
        G = G.copy()
        G[dead, :] = 0.0
        G[:, dead] = 0.0
        C = C.copy()
        C[dead, :] = 0.0
    B0 = np.zeros(C.shape) if warm_start is None else np.array(warm_start, dtype=float)
    psi, iters, conv = _cd_all(G, C, float(lam), B0, float(tol), int(max_iter))
    inner = tol
    for _ in range(4):
        psi[np.abs(psi) < HARD_ZERO] = 0.0
        # subgradient optimality residual per row
        grad = G @ psi - C
        res = np.where(psi != 0.0, np.abs(grad + lam * np.sign(psi)),
                       np.maximum(np.abs(grad) - lam, 0.0))
        res[dead, :] = 0.0
        kkt = res.max(axis=0, initial=0.0)
        if np.all(kkt <= tol) or not np.all(conv):
            break
        inner *= 0.1
        psi, more, conv = _cd_all(G, C, float(lam), psi, float(inner), int(max_iter))
        iters = iters + more
    return psi, iters, conv, kkt


def lasso_fit(traj, lam, tol=1e-8, max_iter=100_000):
    """Lasso estimate of ``(A, B)`` from a trajectory, pairs ``t = 1..T-1``."""
    if traj.T < 2:
        raise LassoInputError("need at least T = 2")
    Z, Y = regression_data(traj)
    psi, iters, conv, kkt = lasso_solve(Z, Y, lam, _normalizer(traj.T), tol, max_iter)
    n = traj.n
    Ahat = psi[:n].T.copy()
    Bhat = psi[n:].T.copy()
    support = SparsityPattern.from_matrix(np.hstack([Ahat, Bhat]))
    return LassoEstimate(Ahat, Bhat, float(lam), support, iters, conv, kkt)


def lasso_objective(traj, A, B, lam):
    """Value of the Lasso objective summed over rows."""
    Z, Y = regression_data(traj)
    psi = np.hstack([A, B]).T
    r = Y - Z @ psi
    return float(0.5 * (r ** 2).sum() / _normalizer(traj.T) + lam * np.abs(psi).sum())


def critical_lambda(traj):
    """Smallest ``lam`` for which every row estimate is zero."""
    Z, Y = regression_data(traj)
    return float(np.abs(Z.T @ Y).max() / _normalizer(traj.T))


def choose_lambda(T, n, m, delta, c_lambda):
    """``c_lambda * sqrt(log((n+m)/delta) / T)``."""
    if T < 1 or not 0 < delta < 1:
        raise LassoInputError("need T >= 1 and 0 < delta < 1")
    return float(c_lambda * math.sqrt(math.log((n + m) / delta) / T))


def auto_c_lambda(traj, delta, holdout=0.2, n_grid=5):
    """Pick ``c_lambda`` by one-step prediction error on a held-out suffix.

    The grid is geometric between ``1e-3`` and ``0.3`` of the critical
    value, rescaled to the ``c_lambda`` units of :func:`choose_lambda`.
    """
    T = traj.T
    split = int(round((1 - holdout) * T))
    if split < 3 or T - split < 2:
        raise LassoInputError("trajectory too short for hold-out selection")
    Ztr, Ytr = regression_data(traj, 1, split - 1)
    Zte, Yte = regression_data(traj, split, T - 1)
    norm = max(Ztr.shape[0] - 1, 1)
    lmax = np.abs(Ztr.T @ Ytr).max() / norm
    scale = math.sqrt(math.log((traj.n + traj.m) / delta) / split)
    best = None
    for frac in np.geomspace(1e-3, 0.3, n_grid):
        lam = frac * lmax
        psi, *_ = lasso_solve(Ztr, Ytr, lam, norm)
        err = float(((Yte - Zte @ psi) ** 2).mean())
        if best is None or err < best[0]:
            best = (err, lam / scale)
    return best[1]


def support_report(est, truth):
    """``(exact, false_positives, false_negatives)`` against a true pattern."""
    sup = est.support if hasattr(est, "support") else est
    if sup.shape != truth.shape:
        raise LassoInputError(f"estimate shape {sup.shape} differs from truth {truth.shape}")
    a, b = set(sup.entries), set(truth.entries)
    fp, fn = len(a - b), len(b - a)
    return fp == 0 and fn == 0, fp, fn
