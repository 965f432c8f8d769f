"""Binary sparsity patterns and their boolean algebra.

Patterns are stored as sorted coordinate lists. Products and powers are
evaluated densely for small shapes and through ``scipy.sparse`` otherwise.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 64


class ShapeError(ValueError):
    """Raised when pattern shapes are not conformable."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class SparsityPattern:
    """Immutable support set of a ``rows x cols`` matrix.

    Parameters
    ----------
    rows, cols : int
        Shape of the matrix the pattern describes.
    entries : iterable of (int, int), optional
        Nonzero coordinates. Duplicates are merged.
    """

    __slots__ = ("_shape", "_r", "_c", "_hash")

    def __init__(self, rows, cols, entries=()):
        rows, cols = int(rows), int(cols)
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative shape ({rows}, {cols})")
        coords = np.asarray(list(entries), dtype=np.int64).reshape(-1, 2)
        self._init(rows, cols, coords[:, 0], coords[:, 1])

    def _init(self, rows, cols, r, c):
        r = np.asarray(r, dtype=np.int64)
        c = np.asarray(c, dtype=np.int64)
        if r.size and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ShapeError(f"pattern index out of range for shape ({rows}, {cols})")
        key = np.unique(r * max(cols, 1) + c)
        self._shape = (rows, cols)
        self._r = _readonly(key // max(cols, 1))
        self._c = _readonly(key % max(cols, 1))
        self._hash = None

    @classmethod
    def _from_arrays(cls, rows, cols, r, c):
        obj = cls.__new__(cls)
        obj._init(rows, cols, r, c)
        return obj

    # constructors -------------------------------------------------------

    @classmethod
    def from_dense(cls, mask):
        mask = np.asarray(mask)
        if mask.ndim != 2:
            raise ShapeError("pattern mask must be two-dimensional")
        r, c = np.nonzero(mask)
        return cls._from_arrays(mask.shape[0], mask.shape[1], r, c)

    @classmethod
    def from_matrix(cls, M, tol=0.0):
        """Support of ``M``: entries with ``|M_ij| > tol``."""
        if sp.issparse(M):
            M = M.tocoo()
            keep = np.abs(M.data) > tol
            return cls._from_arrays(M.shape[0], M.shape[1], M.row[keep], M.col[keep])
        M = np.asarray(M, dtype=float)
        return cls.from_dense(np.abs(M) > tol)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls._from_arrays(n, n, idx, idx)

    @classmethod
    def empty(cls, rows, cols):
        return cls._from_arrays(rows, cols, [], [])

    @classmethod
    def full(cls, rows, cols):
        return cls.from_dense(np.ones((rows, cols), dtype=bool))

    # accessors ----------------------------------------------------------

    @property
    def shape(self):
        return self._shape

    @property
    def rows(self):
        return self._shape[0]

    @property
    def cols(self):
        return self._shape[1]

    @property
    def nnz(self):
        return int(self._r.size)

    @property
    def entries(self):
        return list(zip(self._r.tolist(), self._c.tolist()))

    @property
    def coords(self):
        """Row and column index arrays, sorted row-major (read-only)."""
        return self._r, self._c

    def to_dense(self):
        out = np.zeros(self._shape, dtype=bool)
        out[self._r, self._c] = True
        return out

    def to_sparse(self):
        data = np.ones(self.nnz, dtype=np.int64)
        return sp.csr_matrix((data, (self._r, self._c)), shape=self._shape)

    def column(self, j):
        """Sorted row indices present in column ``j``."""
        return self._r[self._c == j]

    def row_counts(self):
        return np.bincount(self._r, minlength=self.rows)

    def col_counts(self):
        return np.bincount(self._c, minlength=self.cols)

    def max_line_count(self):
        """Largest number of nonzeros in any single row or column."""
        if self.nnz == 0:
            return 0
        return int(max(self.row_counts().max(), self.col_counts().max()))

    def contains(self, other):
        """True if ``other`` is a subset of this pattern."""
        if other.shape != self.shape:
            raise ShapeError(f"shape mismatch {other.shape} vs {self.shape}")
        if other.nnz == 0:
            return True
        mine = set(zip(self._r.tolist(), self._c.tolist()))
        return all(e in mine for e in other.entries)

    def supports(self, M, tol=0.0):
        """True if every entry of ``M`` outside the pattern is within ``tol``."""
        M = np.asarray(M, dtype=float)
        if M.shape != self.shape:
            raise ShapeError(f"shape mismatch {M.shape} vs {self.shape}")
        outside = np.abs(M) * ~self.to_dense()
        return bool(outside.max(initial=0.0) <= tol)

    # algebra ------------------------------------------------------------

    @property
    def T(self):
        return SparsityPattern._from_arrays(self.cols, self.rows, self._c, self._r)

    def union(self, other):
        if other.shape != self.shape:
            raise ShapeError(f"cannot unite {self.shape} with {other.shape}")
        r = np.concatenate([self._r, other._r])
        c = np.concatenate([self._c, other._c])
        return SparsityPattern._from_arrays(self.rows, self.cols, r, c)

    def compose(self, other):
        """Support of the boolean product ``self @ other``."""
        if self.cols != other.rows:
            raise ShapeError(f"cannot compose {self.shape} with {other.shape}")
        rows, cols = self.rows, other.cols
        if max(rows, cols, self.cols) < DENSE_LIMIT:
            prod = self.to_dense().astype(np.int64) @ other.to_dense().astype(np.int64)
            return SparsityPattern.from_dense(prod > 0)
        prod = (self.to_sparse() @ other.to_sparse()).tocoo()
        keep = prod.data > 0
        return SparsityPattern._from_arrays(rows, cols, prod.row[keep], prod.col[keep])

    __matmul__ = compose
    __or__ = union

    def power(self, e):
        """Boolean ``e``-th power; ``e = 0`` gives the identity pattern."""
        if self.rows != self.cols:
            raise ShapeError(f"power of non-square pattern {self.shape}")
        e = int(e)
        if e < 0:
            raise ValueError("exponent must be nonnegative")
        result = SparsityPattern.identity(self.rows)
        base = self
        while e:
            if e & 1:
                result = result.compose(base)
            e >>= 1
            if e:
                base = base.compose(base)
        return result

    # dunder -------------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self._r, other._r)
                and np.array_equal(self._c, other._c))

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._shape, self._r.tobytes(), self._c.tobytes()))
        return self._hash

    def __repr__(self):
        return f"SparsityPattern(shape={self.shape}, nnz={self.nnz})"

    # serialization ------------------------------------------------------

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols,
                "entries": [[int(i), int(j)] for i, j in self.entries]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rows"], d["cols"], [tuple(e) for e in d["entries"]])


def pattern_power(P, e):
    return P.power(e)


def pattern_compose(P1, P2):
    return P1.compose(P2)


def pattern_union(P1, P2):
    return P1.union(P2)
