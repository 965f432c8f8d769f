"""scikit-learn style estimators wrapping the identification and synthesis stages.

The three estimators follow the ``fit`` / ``predict`` / ``score`` and
``get_params`` / ``set_params`` conventions, so they can be cloned and
grid-searched. Trajectories are passed as a state array ``X`` of shape
``(T + 1, n)`` and an input array ``U`` of shape ``(T, m)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_array, check_is_fitted

from .bootstrap import bootstrap_eps
from .evaluate import closed_loop_report, realize
from .plant import Trajectory
from .synthesis import SynthesisProblem, golden_section_synthesize
from .sysid import auto_c_lambda, choose_lambda, lasso_fit, regression_data


def check_trajectory(X, U):
    """Validate a state/input pair and wrap it as a :class:`Trajectory`."""
    X = check_array(X, ensure_min_samples=2)
    U = check_array(U, ensure_min_samples=1)
    if U.shape[0] != X.shape[0] - 1:
        raise ValueError(f"U must have one row fewer than X; got {U.shape[0]} and "
                         f"{X.shape[0]}")
    return Trajectory(X, U)


def check_plant(A, B):
    A = check_array(A)
    B = check_array(B)
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError(f"A {A.shape} and B {B.shape} are not conformable")
    return A, B


class LassoSystemIdentifier(BaseEstimator):
    """Row-wise Lasso estimate of ``(A, B)`` from a single trajectory.

    Parameters
    ----------
    lam : float, optional
        Regularization weight. When ``None`` it is set from
        ``c_lambda * sqrt(log((n+m)/delta) / T)``.
    c_lambda : float or "auto"
        Constant of the default weight; ``"auto"`` picks it by validation
        on the trajectory suffix.
    delta : float
        Confidence level entering the default weight.
    tol, max_iter
        Coordinate-descent stopping rule.

    Attributes
    ----------
    A_, B_ : ndarray
        Estimated matrices.
    lambda_ : float
        Weight actually used.
    estimate_ : LassoEstimate
    """

    def __init__(self, lam=None, c_lambda=1.0, delta=0.05, tol=1e-8, max_iter=100_000):
        self.lam = lam
        self.c_lambda = c_lambda
        self.delta = delta
        self.tol = tol
        self.max_iter = max_iter

    def _weight(self, traj):
        if self.lam is not None:
            if self.lam < 0:
                raise ValueError("lam must be nonnegative")
            return float(self.lam)
        c = self.c_lambda
        if c == "auto":
            c = auto_c_lambda(traj, self.delta)
        return choose_lambda(traj.T, traj.n, traj.m, self.delta, float(c))

    def fit(self, X, U):
        traj = check_trajectory(X, U)
        self.lambda_ = self._weight(traj)
        self.estimate_ = lasso_fit(traj, self.lambda_, self.tol, self.max_iter)
        self.A_, self.B_ = self.estimate_.Ahat, self.estimate_.Bhat
        self.n_features_in_ = traj.n + traj.m
        return self

    def predict(self, X, U):
        """One-step predictions ``A x(t) + B u(t)`` for ``t = 0 .. T-1``."""
        check_is_fitted(self, "A_")
        traj = check_trajectory(X, U)
        return traj.states[:-1] @ self.A_.T + traj.inputs @ self.B_.T

    def score(self, X, U):
        """Coefficient of determination of the one-step predictions."""
        traj = check_trajectory(X, U)
        return float(r2_score(traj.states[1:], self.predict(X, U)))

    def regression_targets(self, X, U):
        Z, Y = regression_data(check_trajectory(X, U))
        return Z, Y


class BootstrapErrorBound(BaseEstimator):
    """Identification followed by a bootstrap bound ``eps_bar_`` on the error.

    Parameters
    ----------
    identifier : LassoSystemIdentifier, optional
        Cloned before fitting; the fitted clone is ``identifier_``.
    N, delta : int, float
        Number of rounds and confidence parameter.
    eta_w, eta_v : float
        Noise levels used to resimulate from the estimate.
    seed : int
        Master seed of the bootstrap rounds.
    """

    def __init__(self, identifier=None, N=100, delta=0.05, eta_w=1.0, eta_v=1.0, seed=0):
        self.identifier = identifier
        self.N = N
        self.delta = delta
        self.eta_w = eta_w
        self.eta_v = eta_v
        self.seed = seed

    def fit(self, X, U):
        traj = check_trajectory(X, U)
        base = LassoSystemIdentifier() if self.identifier is None else self.identifier
        self.identifier_ = clone(base).fit(traj.states, traj.inputs)
        self.result_ = bootstrap_eps(self.identifier_.A_, self.identifier_.B_, None,
                                     self.eta_w, self.eta_v, delta=self.delta, N=self.N,
                                     T=traj.T, lam=self.identifier_.lambda_, seed=self.seed)
        self.eps_bar_ = self.result_.eps_bar
        return self

    def predict(self, X, U):
        check_is_fitted(self, "eps_bar_")
        return self.identifier_.predict(X, U)

    def score(self, X, U):
        return self.identifier_.score(X, U)


class RobustSLSController(BaseEstimator):
    """Robust distributed state-feedback controller for an estimated plant.

    Parameters
    ----------
    L : int
        FIR length.
    d, c : int
        Locality radius and communication speed; ``d=None`` drops the
        locality constraint.
    eps_bar : float
        Bound on the model error used in the design.
    alpha : float, optional
        Budget split; defaults to ``1.2 ** -L``.
    eta1, eta2 : float
        Outer (golden section) and inner (QP) tolerances.
    workers : int, optional
        Column solver pool size.

    Attributes
    ----------
    solution_ : SynthesisSolution
    controller_ : SlsController or None
        ``None`` when the program is infeasible.
    feasible_ : bool
    """

    def __init__(self, L=8, d=3, c=2, eps_bar=0.0, alpha=None, eta1=1e-3, eta2=1e-6,
                 workers=None):
        self.L = L
        self.d = d
        self.c = c
        self.eps_bar = eps_bar
        self.alpha = alpha
        self.eta1 = eta1
        self.eta2 = eta2
        self.workers = workers

    def fit(self, A, B):
        A, B = check_plant(A, B)
        if self.eps_bar < 0:
            raise ValueError("eps_bar must be nonnegative")
        self.problem_ = SynthesisProblem.from_plant(A, B, self.eps_bar, self.L, self.d,
                                                    self.c, self.alpha, eta1=self.eta1,
                                                    eta2=self.eta2)
        self.solution_ = golden_section_synthesize(self.problem_, workers=self.workers)
        self.feasible_ = self.solution_.feasible
        self.controller_ = realize(self.solution_) if self.feasible_ else None
        return self

    def predict(self, X):
        """Control inputs for a sequence of measured states (rows of ``X``)."""
        check_is_fitted(self, "solution_")
        if not self.feasible_:
            raise ValueError("the design is infeasible; no controller to run")
        X = check_array(X)
        ctrl = self.controller_
        ctrl.reset()
        out = np.array([ctrl.step(x) for x in X])
        ctrl.reset()
        return out

    def score(self, A, B):
        """Negative closed-loop cost on ``(A, B)`` (``-inf`` if unstable or infeasible)."""
        check_is_fitted(self, "solution_")
        A, B = check_plant(A, B)
        if not self.feasible_:
            return -np.inf
        return -closed_loop_report((A, B), self.controller_).cost

    def report(self, A, B, **kw):
        check_is_fitted(self, "solution_")
        return closed_loop_report(check_plant(A, B), self.controller_, **kw)
