"""Controller realization, closed-loop analysis, cost and certificates."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core.fir import FirResponse
from .plant import UnstableError, dlyap, make_rng, spectral_radius
from .synthesis import budgets, stability_bound

STABILITY_MARGIN = 1e-9


class RealizationError(ValueError):
    pass


class SlsController:
    """State machine realizing ``u = Phi_u Phi_x^{-1} x`` from FIR responses.

    The internal estimate ``delta(t) = D^{-1} (x(t) - sum_{tau>=2}
    Phi_x(tau) delta(t+1-tau))`` uses ``D = Phi_x(1)``; the control is
    ``u(t) = sum_{tau>=1} Phi_u(tau) delta(t+1-tau)``. The last ``L-1``
    estimates are kept in a ring buffer.
    """

    def __init__(self, phi_x, phi_u):
        if phi_x.start_lag != 1 or phi_u.start_lag != 1 or phi_x.length != phi_u.length:
            raise RealizationError("responses must cover lags 1..L")
        n = phi_x.shape[0]
        if phi_x.shape != (n, n) or phi_u.shape[1] != n:
            raise RealizationError("Phi_x must be n x n and Phi_u m x n")
        D = phi_x.tap(1)
        try:
            self._Dinv = np.linalg.inv(D)
        except np.linalg.LinAlgError as exc:
            raise RealizationError("Phi_x(1) is singular") from exc
        self.phi_x = phi_x
        self.phi_u = phi_u
        self.n, self.m, self.L = n, phi_u.shape[0], phi_x.length
        self.reset()

    def reset(self):
        self._mem = np.zeros((max(self.L - 1, 0), self.n))
        self._head = 0

    def _past(self, k):
        # delta(t - k), k = 1..L-1
        return self._mem[(self._head - k) % self._mem.shape[0]]

    def step(self, x):
        acc = np.asarray(x, dtype=float).copy()
        for tau in range(2, self.L + 1):
            acc -= self.phi_x.tap(tau) @ self._past(tau - 1)
        delta = self._Dinv @ acc
        u = self.phi_u.tap(1) @ delta
        for tau in range(2, self.L + 1):
            u += self.phi_u.tap(tau) @ self._past(tau - 1)
        if self.L > 1:
            self._mem[self._head % self._mem.shape[0]] = delta
            self._head += 1
        return u

    def state_space(self):
        """``(E, Ku)`` with ``delta(t) = E xi(t)`` and ``u(t) = Ku xi(t)``.

        ``xi(t) = [x(t); delta(t-1); ...; delta(t-L+1)]``.
        """
        n, L = self.n, self.L
        E = np.zeros((n, n * L))
        E[:, :n] = self._Dinv
        for tau in range(2, L + 1):
            E[:, (tau - 1) * n:tau * n] = -self._Dinv @ self.phi_x.tap(tau)
        Ku = self.phi_u.tap(1) @ E
        for tau in range(2, L + 1):
            Ku[:, (tau - 1) * n:tau * n] += self.phi_u.tap(tau)
        return E, Ku


def realize(solution):
    """Controller for a feasible synthesis result."""
    if not getattr(solution, "feasible", False):
        raise RealizationError("cannot realize an infeasible solution")
    return SlsController(solution.phi_x, solution.phi_u)


def closed_loop_matrix(A, B, ctrl):
    """Augmented closed-loop matrix over ``[x; delta(t-1..t-L+1)]``."""
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m, L = ctrl.n, ctrl.m, ctrl.L
    if A.shape != (n, n) or B.shape != (n, m):
        raise RealizationError(f"plant {A.shape}/{B.shape} does not match controller "
                               f"({n} states, {m} inputs)")
    E, Ku = ctrl.state_space()
    N = n * L
    F = np.zeros((N, N))
    F[:n, :] = B @ Ku
    F[:n, :n] += A
    if L > 1:
        F[n:2 * n, :] = E
        F[2 * n:, n:N - n] = np.eye(N - 2 * n)
    return F


@dataclass
class ClosedLoopReport:
    spectral_radius: float
    stable: bool
    cost: float = math.nan
    cost_method: str = "lyapunov"
    certificate: dict = field(default_factory=dict)


def _plant_AB(plant):
    return (plant.A, plant.B) if hasattr(plant, "A") else plant


def lqr_cost(plant, ctrl, sigma_w=1.0, Q=None, R=None, method="lyapunov", steps=1_000_000,
             seed=0):
    """Closed-loop cost ``J = sqrt(tr(Q Pxx) + tr(R Puu))`` under ``w ~ N(0, s^2 I)``.

    ``method="impulse"`` sums squared impulse responses (no dense
    Lyapunov solve; preferred for long FIR horizons).
    ``method="montecarlo"`` averages ``x'Qx + u'Ru`` along a simulated
    trajectory after a burn-in of ``20 / (1 - rho)`` steps.
    """
    A, B = _plant_AB(plant)
    Q = getattr(plant, "Q", None) if Q is None else Q
    R = getattr(plant, "R", None) if R is None else R
    n, m = ctrl.n, ctrl.m
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    F = closed_loop_matrix(A, B, ctrl)
    rho = spectral_radius(F)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise UnstableError(f"closed loop is unstable (rho={rho:.6g}); cost undefined")
    if method == "impulse":
        return impulse_cost(A, B, ctrl, Q, R, sigma_w)
    _, Ku = ctrl.state_space()
    N = F.shape[0]
    if method == "lyapunov":
        W = np.zeros((N, N))
        W[:n, :n] = sigma_w ** 2 * np.eye(n)
        P = dlyap(F, W)
        J2 = np.trace(Q @ P[:n, :n]) + np.trace(R @ Ku @ P @ Ku.T)
        return float(math.sqrt(max(J2, 0.0)))
    if method != "montecarlo":
        raise ValueError(f"unknown cost method {method!r}")
    rng = make_rng(seed, 7)
    burn = int(math.ceil(20.0 / max(1.0 - rho, 1e-6)))
    xi = np.zeros(N)
    G = np.zeros((N, n))
    G[:n] = np.eye(n)
    total = 0.0
    chunk = 10_000
    done = -burn
    while done < steps:
        k = min(chunk, steps - done) if done >= 0 else min(chunk, -done)
        w = sigma_w * rng.standard_normal((k, n)) @ G.T
        acc = 0.0
        for t in range(k):
            if done >= 0:
                x = xi[:n]
                u = Ku @ xi
                acc += x @ Q @ x + u @ R @ u
            xi = F @ xi + w[t]
        if done >= 0:
            total += acc
        done += k
    return float(math.sqrt(total / steps))


def closed_loop_report(plant, ctrl, sigma_w=1.0, method="lyapunov", **kw):
    A, B = _plant_AB(plant)
    rho = spectral_radius(closed_loop_matrix(A, B, ctrl))
    stable = rho < 1.0 - STABILITY_MARGIN
    cost = lqr_cost(plant, ctrl, sigma_w, method=method, **kw) if stable else math.inf
    return ClosedLoopReport(rho, stable, cost, method)


def static_cost(A, B, K, Q=None, R=None, sigma_w=1.0):
    """Cost of the static gain ``u = Kx`` (``inf`` when unstable)."""
    F = A + B @ K
    if spectral_radius(F) >= 1.0 - STABILITY_MARGIN:
        return math.inf
    n, m = B.shape
    Q = np.eye(n) if Q is None else Q
    R = np.eye(m) if R is None else R
    P = dlyap(F, sigma_w ** 2 * np.eye(n))
    return float(math.sqrt(np.trace(Q @ P) + np.trace(R @ K @ P @ K.T)))


def robust_certificate(solution, eps_used):
    """``(bound, certified)`` from the budgets evaluated at ``eps_used``."""
    if not getattr(solution, "feasible", False):
        raise RealizationError("certificate needs a feasible solution")
    resp, vb = budgets(solution.phi_x, solution.phi_u, solution.v, eps_used)
    cert = solution.certificate
    bound = stability_bound(resp, vb, cert["k_phi"], cert["k_v"])
    return bound, bound < 1.0


def suboptimality_bound(eps_bar, L, k, c_star, rho_star, alpha, a_inf, b_inf):
    """Uncertainty and truncation terms of the relative sub-optimality bound.

    Returns
    -------
    uncertainty : float
        ``16 / min(alpha, 1-alpha) * C rho / (1 - rho) * k^2 * eps_bar``.
    truncation : float
        ``2 sqrt(2) / (1 - alpha) * (a_inf + b_inf) * C k^2 rho^L``.
    admissible : bool
        Whether ``eps_bar < (1 - rho) min(alpha, 1-alpha) / (32 C rho) / k^2``.
    """
    if not 0.0 < rho_star < 1.0 or c_star < 1.0:
        raise ValueError("need 0 < rho_star < 1 and c_star >= 1")
    amin = min(alpha, 1.0 - alpha)
    unc = 16.0 / amin * c_star * rho_star / (1.0 - rho_star) * k ** 2 * eps_bar
    trunc = 2.0 * math.sqrt(2.0) / (1.0 - alpha) * (a_inf + b_inf) * c_star * k ** 2 \
        * rho_star ** L
    admissible = eps_bar < (1.0 - rho_star) * amin / (32.0 * c_star * rho_star) / k ** 2
    return unc, trunc, admissible


def response_envelope(phi_x, phi_u):
    """``max(||Phi_x(t)||_inf, ||Phi_u(t)||_inf)`` per lag (induced norms)."""
    out = []
    for t in phi_x.lags:
        out.append(max(np.abs(phi_x.tap(t)).sum(axis=1).max(initial=0.0),
                       np.abs(phi_u.tap(t)).sum(axis=1).max(initial=0.0)))
    return np.array(out)


def estimate_decay(phi_x, phi_u=None, values=None):
    """Geometric envelope ``h(t) <= C rho^t`` of the response norms.

    ``rho`` comes from a least-squares fit of ``log h(t)`` against ``t``;
    ``C`` is then the smallest constant (at least 1) making the envelope
    dominate every tap. Non-decaying fits are clipped to ``1 - 1e-6``.
    """
    h = np.asarray(values, dtype=float) if values is not None else \
        response_envelope(phi_x, phi_u)
    t = np.arange(1, h.size + 1, dtype=float)
    pos = h > 0
    if not np.any(pos):
        return 1.0, 1e-12
    if pos.sum() == 1:
        rho = float(np.clip(h[pos][0] ** (1.0 / t[pos][0]), 1e-12, 1.0 - 1e-6))
    else:
        slope, _ = np.polyfit(t[pos], np.log(h[pos]), 1)
        rho = float(math.exp(slope))
    if rho >= 1.0 - 1e-6:
        warnings.warn("responses do not decay; rho clipped to 1 - 1e-6", stacklevel=2)
        rho = 1.0 - 1e-6
    rho = max(rho, 1e-12)
    C = max(1.0, float(np.max(h[pos] / rho ** t[pos])))
    return C, rho


def impulse_oracle(phi_x, phi_u, v, horizon):
    """Series of ``Phi (I + V)^{-1}`` up to ``horizon`` taps (lags 1..horizon)."""
    n = phi_x.shape[0]
    W = [np.linalg.inv(np.eye(n) + v.tap(0))]
    for k in range(1, horizon):
        acc = np.zeros((n, n))
        for i in range(1, min(k, v.length) + 1):
            acc += v.tap(i) @ W[k - i]
        W.append(-W[0] @ acc)
    Rx, Ru = [], []
    for t in range(1, horizon + 1):
        sx = sum(phi_x.tap(tau) @ W[t - tau] for tau in range(1, min(t, phi_x.length) + 1))
        su = sum(phi_u.tap(tau) @ W[t - tau] for tau in range(1, min(t, phi_u.length) + 1))
        Rx.append(sx)
        Ru.append(su)
    return FirResponse(Rx, 1), FirResponse(Ru, 1)


def impulse_response(A, B, ctrl, j, horizon):
    """Simulate ``w(0) = e_j`` on ``(A, B)``; returns ``x(1..h)`` and ``u(1..h)``."""
    n = ctrl.n
    ctrl.reset()
    x = np.zeros(n)
    u = ctrl.step(x)
    x = A @ x + B @ u
    x[j] += 1.0
    xs, us = [], []
    for _ in range(horizon):
        u = ctrl.step(x)
        xs.append(x.copy())
        us.append(u)
        x = A @ x + B @ u
    ctrl.reset()
    return np.array(xs), np.array(us)


def impulse_cost(A, B, ctrl, Q=None, R=None, sigma_w=1.0, rtol=1e-12, max_horizon=100_000):
    """Closed-loop cost from all ``n`` impulse responses simulated at once.

    The sum is stopped once a tap adds less than ``rtol`` of the running
    total for ``L`` consecutive steps.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m, L = ctrl.n, ctrl.m, ctrl.L
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    Dinv = ctrl._Dinv
    taps_x = [ctrl.phi_x.tap(t) for t in range(1, L + 1)]
    taps_u = [ctrl.phi_u.tap(t) for t in range(1, L + 1)]
    mem = [np.zeros((n, n)) for _ in range(L)]   # delta(t-1), delta(t-2), ...
    X = np.eye(n)
    total, quiet = 0.0, 0
    for _ in range(max_horizon):
        acc = X.copy()
        for tau in range(2, L + 1):
            acc -= taps_x[tau - 1] @ mem[tau - 2]
        delta = Dinv @ acc
        U = taps_u[0] @ delta
        for tau in range(2, L + 1):
            U += taps_u[tau - 1] @ mem[tau - 2]
        inc = float(np.sum(X * (Q @ X)) + np.sum(U * (R @ U)))
        total += inc
        if not math.isfinite(total):
            raise UnstableError("impulse response diverges")
        quiet = quiet + 1 if inc <= rtol * total else 0
        if quiet >= max(L, 1):
            break
        mem = [delta] + mem[:-1]
        X = A @ X + B @ U
    else:
        raise UnstableError("impulse response did not settle within max_horizon")
    return float(sigma_w * math.sqrt(total))
