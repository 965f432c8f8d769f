"""Data-driven upper bound on the identification error by parametric bootstrap."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .plant import (PlantModel, UnstableError, _gaussian_factor, make_rng, simulate,
                    spectral_radius, stationary_cov)
from .sysid import lasso_fit


def spectral_norm(X, tol=1e-10, max_iter=10_000):
    """Largest singular value by power iteration on ``X'X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.any(X):
        return 0.0
    G = X.T @ X
    v = np.ones(G.shape[0]) / math.sqrt(G.shape[0])
    # deterministic start that is not orthogonal to the top eigenvector
    v = v + G[:, np.argmax(np.abs(G).sum(axis=0))] / (np.abs(G).max() or 1.0)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * max(abs(new), 1e-300):
            return math.sqrt(max(new, 0.0))
        lam = new
    # slow convergence (clustered top singular values): fall back to LAPACK
    return float(np.linalg.norm(X, 2))


def nearest_rank(samples, delta):
    """The ``ceil((1 - delta) N)``-th smallest sample (1-based rank)."""
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise ValueError("no samples")
    rank = min(max(math.ceil((1.0 - delta) * s.size - 1e-12), 1), s.size)
    return float(s[rank - 1])


@dataclass(frozen=True)
class BootstrapResult:
    eps_bar: float
    samples: np.ndarray
    delta: float
    N: int
    seed: int
    excluded: int = 0

    @property
    def sorted_samples(self):
        return np.sort(self.samples)

    def to_dict(self):
        return {"eps_bar": self.eps_bar, "delta": self.delta, "N": self.N,
                "seed": self.seed, "excluded": self.excluded,
                "samples": self.samples.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["eps_bar"]), np.asarray(d["samples"], dtype=float),
                   float(d["delta"]), int(d["N"]), int(d["seed"]), int(d.get("excluded", 0)))


def bootstrap_eps(Ahat, Bhat, K0=None, eta_w=1.0, eta_v=1.0, M=None, delta=0.05, N=100,
                  T=100, lam=0.0, seed=0, init_from_stationary=True, x0=None, probe=None,
                  lasso_tol=1e-8):
    """Percentile bound on ``max(||A_i - Ahat||_2, ||B_i - Bhat||_2)``.

    Each round simulates a length-``T`` trajectory from ``(Ahat, Bhat)``
    under ``u = K0 x + v``, refits the Lasso with the same ``lam`` and
    records ``eps_i``. Round ``i`` draws from the stream ``(seed, i)``.
    ``M`` (the state covariance for ``x(0)``) is computed once from the
    estimated plant when not supplied. Rounds whose Lasso fit does not
    converge are dropped; a warning is raised above 5 % exclusions. ``x0``
    and ``probe`` are used when ``init_from_stationary`` is off;
    ``lasso_tol`` is the stopping tolerance of every refit.
    """
    Ahat = np.asarray(Ahat, dtype=float)
    Bhat = np.asarray(Bhat, dtype=float)
    n, m = Bhat.shape
    K0 = np.zeros((m, n)) if K0 is None else np.asarray(K0, dtype=float)
    if N < 1:
        raise ValueError("N must be at least 1")
    rho = spectral_radius(Ahat + Bhat @ K0)
    if init_from_stationary and rho >= 1.0:
        raise UnstableError(f"estimated closed loop has spectral radius {rho:.6g} >= 1")
    model = PlantModel(Ahat, Bhat, sigma_w=eta_w, sigma_v=eta_v, K0=K0, name="bootstrap")
    if init_from_stationary and M is None:
        M = stationary_cov(model)[:n, :n]
    samples, bad = [], 0
    for i in range(N):
        traj = _draw(model, T, seed, i, M, init_from_stationary, x0, probe)
        est = lasso_fit(traj, lam, lasso_tol)
        if not est.all_converged:
            bad += 1
            continue
        samples.append(max(spectral_norm(est.Ahat - Ahat), spectral_norm(est.Bhat - Bhat)))
    if bad > 0.05 * N:
        warnings.warn(f"{bad} of {N} bootstrap rounds excluded (Lasso not converged)",
                      stacklevel=2)
    samples = np.asarray(samples)
    return BootstrapResult(nearest_rank(samples, delta), samples, float(delta), int(N),
                           int(seed), bad)


def _draw(model, T, seed, i, M, stationary, x0, probe):
    if not stationary:
        return simulate(model, T, seed, init_from_stationary=False, x0=x0, stream=i,
                        probe=probe)
    rng = make_rng(seed, i, 1)
    start = _gaussian_factor(M) @ rng.standard_normal(model.n)
    return simulate(model, T, seed, init_from_stationary=False, x0=start, stream=i,
                    probe=probe)
