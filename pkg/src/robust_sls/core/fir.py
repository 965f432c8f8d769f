"""Finite impulse response containers for transfer matrices."""

from __future__ import annotations

import numpy as np

from .patterns import ShapeError, SparsityPattern


class FirResponse:
    """Transfer matrix ``sum_t M(t) z^-t`` for ``t = start_lag .. length``.

    ``Phi_x`` and ``Phi_u`` use ``start_lag=1``; the slack ``V`` uses
    ``start_lag=0``. Taps are copied and frozen on construction.

    Parameters
    ----------
    taps : sequence of 2-D arrays
        Spectral components in lag order, all of the same shape.
    start_lag : int
        Lag of the first tap.
    patterns : sequence of SparsityPattern, optional
        Per-lag support sets. Every tap must lie inside its pattern.
    """

    __slots__ = ("_taps", "_start", "_patterns")

    def __init__(self, taps, start_lag=1, patterns=None, tol=0.0):
        taps = [np.array(t, dtype=float, copy=True) for t in taps]
        if not taps:
            raise ShapeError("FirResponse needs at least one tap")
        shape = taps[0].shape
        if len(shape) != 2 or any(t.shape != shape for t in taps):
            raise ShapeError("all taps must be 2-D with a common shape")
        for t in taps:
            t.setflags(write=False)
        if patterns is not None:
            patterns = tuple(patterns)
            if len(patterns) != len(taps):
                raise ShapeError("one pattern per tap required")
            for lag, (tap, pat) in enumerate(zip(taps, patterns), start=start_lag):
                if not pat.supports(tap, tol):
                    raise ValueError(f"tap at lag {lag} leaves its sparsity pattern")
        self._taps = tuple(taps)
        self._start = int(start_lag)
        self._patterns = patterns

    @property
    def start_lag(self):
        return self._start

    @property
    def length(self):
        """Last lag ``L`` carried by the response."""
        return self._start + len(self._taps) - 1

    @property
    def lags(self):
        return range(self._start, self.length + 1)

    @property
    def shape(self):
        return self._taps[0].shape

    @property
    def taps(self):
        return self._taps

    @property
    def patterns(self):
        return self._patterns

    def __len__(self):
        return len(self._taps)

    def tap(self, t):
        """Component at lag ``t``; zero outside the stored range."""
        if self._start <= t <= self.length:
            return self._taps[t - self._start]
        return np.zeros(self.shape)

    def stacked(self):
        """Array of shape ``(len, rows, cols)``."""
        return np.stack(self._taps)

    def scale(self, c):
        return FirResponse([c * t for t in self._taps], self._start, self._patterns)

    def vstack(self, other):
        """Stack ``[self; other]`` lag by lag (lags must agree)."""
        if other.start_lag != self._start or other.length != self.length:
            raise ShapeError("responses must cover the same lags to stack")
        return FirResponse([np.vstack([a, b]) for a, b in zip(self._taps, other.taps)],
                           self._start)

    def support(self):
        """Union of tap supports."""
        mask = np.zeros(self.shape, dtype=bool)
        for t in self._taps:
            mask |= t != 0
        return SparsityPattern.from_dense(mask)

    def frequency_response(self, omegas):
        """``G(e^{i w}) = sum_t M(t) e^{-i w t}`` for each frequency."""
        omegas = np.asarray(omegas, dtype=float)
        lags = np.arange(self._start, self.length + 1)
        phase = np.exp(-1j * np.outer(omegas, lags))
        return np.einsum("wt,tij->wij", phase, self.stacked())

    def to_dict(self):
        out = {"start_lag": self._start, "length": self.length,
               "rows": self.shape[0], "cols": self.shape[1],
               "taps": [t.tolist() for t in self._taps]}
        if self._patterns is not None:
            out["patterns"] = [p.to_dict() for p in self._patterns]
        return out

    @classmethod
    def from_dict(cls, d):
        pats = d.get("patterns")
        if pats is not None:
            pats = [SparsityPattern.from_dict(p) for p in pats]
        taps = [np.asarray(t, dtype=float).reshape(d["rows"], d["cols"]) for t in d["taps"]]
        return cls(taps, d["start_lag"], pats, tol=1e-12)

    def __repr__(self):
        return f"FirResponse(lags={self._start}..{self.length}, shape={self.shape})"
