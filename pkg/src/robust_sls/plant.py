"""Benchmark plants, simulation, and Lyapunov/Riccati utilities."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .core.patterns import SparsityPattern


class UnstableError(ValueError):
    """Raised when an operation needs a Schur-stable matrix."""


class PlantInputError(ValueError):
    pass


def make_rng(seed, *keys):
    """Counter-based generator keyed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def spectral_radius(F):
    """Largest eigenvalue modulus (LAPACK Hessenberg-QR eigenvalues)."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(F)).max())


def _check_spd(X, name):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != X.shape[1]:
        raise PlantInputError(f"{name} must be square")
    if np.abs(X - X.T).max(initial=0.0) > 1e-10:
        raise PlantInputError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(X).min() <= 0:
        raise PlantInputError(f"{name} must be positive definite")
    return X


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Linear plant ``x+ = Ax + Bu + w`` with LQR weights and noise levels.

    Parameters
    ----------
    A, B : ndarray
        System matrices, ``n x n`` and ``n x m``.
    Q, R : ndarray, optional
        Cost weights (identity by default), symmetric positive definite.
    sigma_w, sigma_v : float
        Disturbance and probing-input standard deviations.
    K0 : ndarray, optional
        Static ``m x n`` controller used during data collection (zero by default).
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray = None
    R: np.ndarray = None
    sigma_w: float = 1.0
    sigma_v: float = 1.0
    K0: np.ndarray = None
    name: str = field(default="plant", compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise PlantInputError(f"A {A.shape} and B {B.shape} are not conformable")
        m = B.shape[1]
        Q = np.eye(n) if self.Q is None else _check_spd(self.Q, "Q")
        R = np.eye(m) if self.R is None else _check_spd(self.R, "R")
        if Q.shape != (n, n) or R.shape != (m, m):
            raise PlantInputError("Q or R has the wrong size")
        K0 = np.zeros((m, n)) if self.K0 is None else np.asarray(self.K0, dtype=float)
        if K0.shape != (m, n):
            raise PlantInputError(f"K0 must be {m} x {n}")
        if self.sigma_w < 0 or self.sigma_v < 0:
            raise PlantInputError("noise levels must be nonnegative")
        for key, val in (("A", A), ("B", B), ("Q", Q), ("R", R), ("K0", K0)):
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, key, val)
        object.__setattr__(self, "sigma_w", float(self.sigma_w))
        object.__setattr__(self, "sigma_v", float(self.sigma_v))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def closed_loop(self):
        return self.A + self.B @ self.K0

    def with_matrices(self, A, B, name=None):
        return PlantModel(A, B, self.Q, self.R, self.sigma_w, self.sigma_v, self.K0,
                          name or self.name)

    def support_ab(self, tol=0.0):
        return SparsityPattern.from_matrix(np.hstack([self.A, self.B]), tol)

    def model_hash(self):
        h = hashlib.sha256()
        for arr in (self.A, self.B, self.Q, self.R, self.K0):
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(np.array([self.sigma_w, self.sigma_v]).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, PlantModel):
            return NotImplemented
        return self.model_hash() == other.model_hash()

    def __hash__(self):
        return hash(self.model_hash())

    def to_dict(self):
        return {"name": self.name, "n": self.n, "m": self.m,
                "A": self.A.tolist(), "B": self.B.tolist(), "Q": self.Q.tolist(),
                "R": self.R.tolist(), "K0": self.K0.tolist(),
                "sigma_w": self.sigma_w, "sigma_v": self.sigma_v}

    @classmethod
    def from_dict(cls, d):
        n, m = int(d["n"]), int(d["m"])
        arr = lambda key, shape: np.asarray(d[key], dtype=float).reshape(shape)
        return cls(arr("A", (n, n)), arr("B", (n, m)), arr("Q", (n, n)), arr("R", (m, m)),
                   d["sigma_w"], d["sigma_v"], arr("K0", (m, n)), d.get("name", "plant"))


@dataclass(frozen=True)
class Trajectory:
    """States ``x(0..T)`` (rows) and inputs ``u(0..T-1)``."""

    states: np.ndarray
    inputs: np.ndarray
    seed: int = 0
    model_id: str = ""

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        u = np.asarray(self.inputs, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if x.shape[0] != u.shape[0] + 1:
            raise PlantInputError(f"{x.shape[0]} states need {x.shape[0] - 1} inputs, got {u.shape[0]}")
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "inputs", u)

    @property
    def T(self):
        return self.inputs.shape[0]

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.inputs.shape[1]


def make_chain(n, a, D=0.0, actuated=None, scale=1.0, sigma_w=1.0, sigma_v=1.0, Q=None, R=None):
    """Chain graph-Laplacian plant.

    Interior nodes get diagonal ``D_i + 1 - 2 a_i`` and end nodes
    ``D_i + 1 - a_i``; off-diagonal couplings of row ``i`` equal ``a_i``.
    ``a`` and ``D`` may be scalars or length-``n`` arrays. ``actuated`` is a
    boolean mask selecting columns of the identity for ``B`` (all nodes by
    default). The whole ``A`` is multiplied by ``scale``.
    """
    if n < 2:
        raise PlantInputError("chain needs n >= 2")
    a = np.broadcast_to(np.asarray(a, dtype=float), (n,))
    D = np.broadcast_to(np.asarray(D, dtype=float), (n,))
    A = np.zeros((n, n))
    for i in range(n):
        ends = (i == 0) + (i == n - 1)
        A[i, i] = D[i] + 1 - (2 - ends) * a[i]
        if i > 0:
            A[i, i - 1] = a[i]
        if i < n - 1:
            A[i, i + 1] = a[i]
    A *= scale
    mask = np.ones(n, dtype=bool) if actuated is None else np.asarray(actuated, dtype=bool)
    if mask.shape != (n,) or not mask.any():
        raise PlantInputError("actuation mask must have n entries and at least one True")
    B = np.eye(n)[:, mask]
    return PlantModel(A, B, Q, R, sigma_w, sigma_v, name=f"chain{n}")


def spread_actuators(n, m):
    """Mask with ``m`` actuators spread evenly along a chain of ``n`` nodes."""
    idx = np.unique(np.round(np.linspace(0, n - 1, m)).astype(int))
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return mask


def perturb(M, level, rng):
    """Elementwise uniform perturbation in ``[M - level|M|, M + level|M|]``."""
    M = np.asarray(M, dtype=float)
    return M + level * np.abs(M) * rng.uniform(-1.0, 1.0, size=M.shape)


def dlyap(F, W, tol=1e-15, max_iter=200):
    """Solve ``F P F' - P + W = 0`` by the doubling iteration."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if F.shape != W.shape or F.shape[0] != F.shape[1]:
        raise PlantInputError("F and W must be square of equal size")
    rho = spectral_radius(F)
    if rho >= 1.0:
        raise UnstableError(f"spectral radius {rho:.6g} >= 1")
    P = W.copy()
    Fk = F.copy()
    for _ in range(max_iter):
        inc = Fk @ P @ Fk.T
        P = P + inc
        if np.abs(inc).max(initial=0.0) <= tol * (1.0 + np.abs(P).max(initial=0.0)):
            break
        Fk = Fk @ Fk
    return 0.5 * (P + P.T)


def stationary_cov(model):
    """Stationary covariance of ``(x, u)`` under ``u = K0 x + v``."""
    F = model.closed_loop
    B = model.B
    W = model.sigma_w ** 2 * np.eye(model.n) + model.sigma_v ** 2 * B @ B.T
    P = dlyap(F, W)
    K0 = model.K0
    return np.block([[P, P @ K0.T],
                     [K0 @ P, K0 @ P @ K0.T + model.sigma_v ** 2 * np.eye(model.m)]])


def dare(A, B, Q, R, tol=1e-12, max_iter=100_000):
    """Stabilizing DARE solution by fixed-point Riccati iteration."""
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        Pn = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            break
        if np.abs(Pn - P).max() <= tol * (1.0 + np.abs(Pn).max()):
            return Pn
        P = Pn
    raise UnstableError("Riccati iteration did not converge (plant not stabilizable?)")


def dare_gain(model, tol=1e-12, max_iter=100_000, return_P=False):
    """Centralized LQR gain ``K = -(R + B'PB)^-1 B'PA``."""
    A, B = model.A, model.B
    P = dare(A, B, model.Q, model.R, tol, max_iter)
    K = -np.linalg.solve(model.R + B.T @ P @ B, B.T @ P @ A)
    return (K, P) if return_P else K


def _gaussian_factor(C):
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(model, T, seed=0, init_from_stationary=True, x0=None, stream=0, probe=None):
    """Simulate ``T`` steps of ``x+ = Ax + B(K0 x + v) + w``.

    ``x(0)`` is drawn from the stationary state covariance when
    ``init_from_stationary`` is set, else taken from ``x0`` (zero default).
    Randomness comes from a Philox stream keyed by ``(seed, stream)``.
    ``probe`` is an optional deterministic ``T x m`` input added to ``v``.
    """
    T = int(T)
    if T < 1:
        raise PlantInputError("T must be positive")
    rng = make_rng(seed, stream)
    n, m = model.n, model.m
    F = model.closed_loop
    if init_from_stationary:
        W = model.sigma_w ** 2 * np.eye(n) + model.sigma_v ** 2 * model.B @ model.B.T
        P = dlyap(F, W)
        x = _gaussian_factor(P) @ rng.standard_normal(n)
    else:
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    v = model.sigma_v * rng.standard_normal((T, m))
    w = model.sigma_w * rng.standard_normal((T, n))
    if probe is not None:
        v = v + np.asarray(probe, dtype=float).reshape(T, m)
    X = np.empty((T + 1, n))
    U = np.empty((T, m))
    X[0] = x
    A, B, K0 = model.A, model.B, model.K0
    for t in range(T):
        u = K0 @ x + v[t]
        x = A @ x + B @ u + w[t]
        U[t] = u
        X[t + 1] = x
    return Trajectory(X, U, seed, model.model_hash())


def assumption1_diagnostics(M, psi, tol=0.0):
    """Incoherence margin ``r``, ``C_min``, ``D_max`` and ``Psi_min``.

    Parameters
    ----------
    M : ndarray, shape (n+m, n+m)
        Stationary covariance of ``(x, u)``.
    psi : ndarray, shape (n+m, n)
        True ``[A B]'``; column ``j`` defines the support set ``A_j``.

    Returns
    -------
    dict
        ``r`` (one minus the worst incoherence term), ``incoherence``,
        ``C_min``, ``D_max`` and ``Psi_min``.
    """
    M = np.asarray(M, dtype=float)
    psi = np.asarray(psi, dtype=float)
    p = M.shape[0]
    inco, cmin, dmax, pmin = 0.0, np.inf, 0.0, np.inf
    for j in range(psi.shape[1]):
        S = np.flatnonzero(np.abs(psi[:, j]) > tol)
        if S.size == 0:
            continue
        Sc = np.setdiff1d(np.arange(p), S)
        MSS = M[np.ix_(S, S)]
        lam = np.linalg.eigvalsh(MSS).min()
        cmin = min(cmin, lam)
        pmin = min(pmin, np.abs(psi[S, j]).max())
        if lam <= 1e-14:
            cmin = 0.0
            continue
        inv = np.linalg.inv(MSS)
        dmax = max(dmax, np.abs(inv).sum(axis=1).max())
        if Sc.size:
            inco = max(inco, np.abs(M[np.ix_(Sc, S)] @ inv).sum(axis=1).max())
    return {"r": 1.0 - inco, "incoherence": inco, "C_min": float(cmin),
            "D_max": float(dmax), "Psi_min": float(pmin)}
