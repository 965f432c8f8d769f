"""Norm surrogates for FIR transfer matrices.

The E1 norm (supremum over the unit circle of the induced 1-norm) is only
ever evaluated through its summed-tap upper bound. The frequency-grid
value returned by :func:`hinf_grid_estimate` is a lower estimate of the
H-infinity norm, useful as a diagnostic against :func:`hinf_bound`.
"""

import numpy as np

N_GRID = 512


def column_l1_budget(fir):
    """Per-column sums ``sum_t ||M(t)[:, j]||_1``."""
    return np.abs(fir.stacked()).sum(axis=(0, 1))


def e1_norm_bound(fir):
    """``sum_t ||M(t)||_1`` with ``||.||_1`` the max column sum."""
    return float(sum(np.abs(t).sum(axis=0).max(initial=0.0) for t in fir.taps))


def row_nnz_max(fir):
    """Largest nonzero count over the rows of the union of tap supports."""
    counts = fir.support().row_counts()
    return int(counts.max(initial=0))


def hinf_bound(fir, row_nnz=None):
    """Certified upper bound ``sqrt(k) * e1_norm_bound``.

    ``row_nnz`` must dominate the row nonzero count of every ``G(z)``;
    when omitted it is computed from the tap supports.
    """
    if row_nnz is None:
        row_nnz = row_nnz_max(fir)
    return float(np.sqrt(max(row_nnz, 0)) * e1_norm_bound(fir))


def hinf_grid_estimate(fir, n_grid=N_GRID):
    """Max spectral norm over ``n_grid`` uniform points on the unit circle."""
    omegas = 2.0 * np.pi * np.arange(n_grid) / n_grid
    G = fir.frequency_response(omegas)
    return float(np.linalg.norm(G, ord=2, axis=(1, 2)).max())
