import itertools

import numpy as np
import pytest

from robust_sls.plant import make_chain, make_rng, perturb, spread_actuators
from robust_sls.synthesis import SynthesisProblem


def enumerate_qp(M, q, H1, h1, tol=1e-9):
    """Brute-force optimum of ``min 0.5 x'Mx + q'x s.t. H1 x <= h1`` (M > 0).

    Tries every active set; returns ``inf`` when none is feasible.
    """
    d = M.shape[0]
    best = np.inf
    for r in range(0, min(d, H1.shape[0]) + 1):
        for S in itertools.combinations(range(H1.shape[0]), r):
            S = list(S)
            if S:
                K = np.block([[M, H1[S].T], [H1[S], np.zeros((r, r))]])
                try:
                    x = np.linalg.solve(K, np.concatenate([-q, h1[S]]))[:d]
                except np.linalg.LinAlgError:
                    continue
            else:
                x = np.linalg.solve(M, -q)
            if np.all(H1 @ x <= h1 + tol):
                best = min(best, 0.5 * x @ M @ x + q @ x)
    return best


def random_instance(seed, n, L, eps=0.0, m=None, d=3, c=2, level=0.0, alpha=None):
    """Perturbed chain synthesis problem (deterministic in ``seed``)."""
    rng = make_rng(seed, 99)
    a = rng.uniform(0.1, 0.3)
    mask = None if m is None else spread_actuators(n, m)
    plant = make_chain(n, a, 0.0, mask, scale=rng.uniform(0.9, 1.05))
    A = perturb(plant.A, level, rng) if level else plant.A
    B = perturb(plant.B, level, rng) if level else plant.B
    return plant, SynthesisProblem.from_plant(A, B, eps, L, d=d, c=c, alpha=alpha)


@pytest.fixture(scope="session")
def chain8():
    D = np.r_[0.05 - 1 / 3, [0.05] * 6, 0.05 - 1 / 3]
    return make_chain(8, 1 / 3, D)


ACCEPTANCE = {}


def report(k, ok, detail):
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
