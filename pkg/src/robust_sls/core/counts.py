from __future__ import annotations

from dataclasses import dataclass

from .patterns import ShapeError, SparsityPattern


@dataclass(frozen=True)
class StructureCounts:
    """Row/column nonzero maxima that set the budget scalings.

    ``k`` is the larger of ``k_ab`` (for ``[A B]``) and ``k_phi`` (for the
    stacked response); ``k_shared`` records whether the two coincided.
    """

    k: int
    k_phi: int
    k_v: int
    k_ab: int

    @property
    def k_shared(self):
        return self.k_ab == self.k_phi

    def to_dict(self):
        return {"k": self.k, "k_phi": self.k_phi, "k_v": self.k_v, "k_ab": self.k_ab}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["k"]), int(d["k_phi"]), int(d["k_v"]), int(d["k_ab"]))


def _stack(top, bottom):
    if top.cols != bottom.cols:
        raise ShapeError("stacked patterns need equal column counts")
    r0, c0 = top.coords
    r1, c1 = bottom.coords
    return SparsityPattern._from_arrays(
        top.rows + bottom.rows, top.cols,
        list(r0) + [r + top.rows for r in r1], list(c0) + list(c1))


def structure_counts(supp_ab, response_patterns, v_patterns):
    """Compute ``k``, ``k_phi`` and ``k_v``.

    Parameters
    ----------
    supp_ab : SparsityPattern
        Support of ``[A B]`` (``n x (n+m)``).
    response_patterns : sequence of (SparsityPattern, SparsityPattern)
        ``(Cx(t), Cu(t))`` per lag, or already stacked ``(n+m) x n`` patterns.
    v_patterns : sequence of SparsityPattern
        ``Cv(t)`` per lag.
    """
    n = supp_ab.rows
    k_ab = supp_ab.max_line_count()
    k_phi = 0
    for item in response_patterns:
        pat = _stack(*item) if isinstance(item, tuple) else item
        if pat.cols != n:
            raise ShapeError("response patterns must have n columns")
        k_phi = max(k_phi, pat.max_line_count())
    k_v = 0
    for pat in v_patterns:
        if pat.shape != (n, n):
            raise ShapeError("V patterns must be n x n")
        k_v = max(k_v, pat.max_line_count())
    k = max(k_ab, k_phi)
    if k_v > 2 * k * k:
        raise AssertionError(f"k_v={k_v} exceeds 2k^2={2 * k * k}")
    return StructureCounts(k=k, k_phi=k_phi, k_v=k_v, k_ab=k_ab)
