"""Signed matrix decompositions, Metzlerization, and interval-vector primitives.

Conventions: for a matrix M, pos = max(M, 0), neg = pos - M, so that
pos - neg = M, |M| = pos + neg. The Metzlerized matrix keeps the diagonal
and takes absolute values off the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Entries this close to zero are treated as exactly zero when splitting,
# so floating-point dust does not create spurious supports downstream.
ZERO_DUST = 1e-12


class MatrixError(ValueError):
    pass


class IntervalError(ValueError):
    pass


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Validate and return a dense 2-D float array."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got ndim={A.ndim}")
    if A.size and not np.all(np.isfinite(A)):
        raise MatrixError(f"{name} has non-finite entries")
    return A


def signed_split(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split M into (pos, neg, abs) with pos - neg = M and disjoint supports."""
    A = as_matrix(M, "signed_split input")
    A = np.where(np.abs(A) <= ZERO_DUST, 0.0, A)
    pos = np.maximum(A, 0.0)
    neg = pos - A
    return pos, neg, pos + neg


def metzlerize(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (diag, offdiag, metzler) for a square M.

    metzler = M^d + |M^nd| has nonnegative off-diagonal entries.
    """
    A = as_matrix(M, "metzlerize input")
    if A.shape[0] != A.shape[1]:
        raise MatrixError(f"metzlerize needs a square matrix, got {A.shape}")
    d = np.diag(np.diag(A))
    nd = A - d
    return d, nd, d + np.abs(nd)


@dataclass(frozen=True)
class IntervalVector:
    """A box [lo, hi] in R^n, lo <= hi elementwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise IntervalError(f"interval bounds shape mismatch: {lo.shape} vs {hi.shape}")
        if lo.size and not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise IntervalError("interval bounds must be finite")
        if np.any(lo > hi):
            raise IntervalError("interval requires lo <= hi elementwise")

    @property
    def n(self) -> int:
        return self.lo.size

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def sample(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        """Uniform sample(s); shape (n,) or (n, count)."""
        if count is None:
            return rng.uniform(self.lo, self.hi)
        return rng.uniform(self.lo[:, None], self.hi[:, None], size=(self.n, count))

    def concat(self, other: "IntervalVector") -> "IntervalVector":
        return IntervalVector(np.concatenate([self.lo, other.lo]),
                              np.concatenate([self.hi, other.hi]))

    @staticmethod
    def from_pairs(pairs) -> "IntervalVector":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return IntervalVector(arr[:, 0], arr[:, 1])

    @staticmethod
    def degenerate(x) -> "IntervalVector":
        x = np.asarray(x, dtype=float)
        return IntervalVector(x.copy(), x.copy())


def width(iv: IntervalVector) -> np.ndarray:
    """Elementwise width hi - lo of an interval vector."""
    return iv.width()


def map_box(S, box: IntervalVector) -> IntervalVector:
    """Tight interval enclosure of {S x : x in box} (center/radius form)."""
    S = as_matrix(S, "map_box matrix")
    c = S @ box.center()
    r = np.abs(S) @ (0.5 * box.width())
    return IntervalVector(c - r, c + r)
