"""Jacobian sign-stable decompositions and mixed-monotone decomposition functions.

A mapping g with Jacobian enclosure [lo, hi] is split as g(z) = H z + mu(z)
where every entry of mu's Jacobian has stable sign over the domain. The
remainder then admits a tight decomposition function evaluated at a vertex
mix selected by binary diagonal matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import exprcore as ex
from .matops import IntervalVector, as_matrix, signed_split, metzlerize

JSS_TOL = 1e-9


class DecompositionError(ValueError):
    pass


def jss_gain(bounds: ex.JacobianBounds) -> np.ndarray:
    """F = hi^+ + lo^- for JSS Jacobian bounds; bounds the decomposition spread."""
    hi_pos = np.maximum(bounds.hi, 0.0)
    lo_neg = np.maximum(-bounds.lo, 0.0)
    return hi_pos + lo_neg


def selector_matrices(bounds: ex.JacobianBounds) -> list[np.ndarray]:
    """Binary diagonal selectors D^i with entry j = 1 iff hi_ij > 0."""
    return [np.where(bounds.hi[i] > JSS_TOL, 1.0, 0.0) for i in range(bounds.shape[0])]


def check_jss(bounds: ex.JacobianBounds, tol: float = JSS_TOL):
    """Return the first sign-unstable entry (i, j), or None if JSS."""
    straddle = (bounds.lo < -tol) & (bounds.hi > tol)
    idx = np.argwhere(straddle)
    return tuple(int(v) for v in idx[0]) if idx.size else None


def select_h(bounds: ex.JacobianBounds, policy: str = "lower") -> np.ndarray:
    """Per-entry vertex selection for H.

    'lower' / 'upper' pick that Jacobian bound everywhere; 'sparse' keeps
    H = 0 on entries that are already sign-stable and uses the lower bound
    otherwise.
    """
    if policy == "lower":
        return bounds.lo.copy()
    if policy == "upper":
        return bounds.hi.copy()
    if policy == "sparse":
        stable = (bounds.lo >= -JSS_TOL) | (bounds.hi <= JSS_TOL)
        return np.where(stable, 0.0, bounds.lo)
    raise DecompositionError(f"unknown H-selection policy {policy!r}")


@dataclass
class JssSplit:
    """g(z) = H z + mu(z) with mu Jacobian sign-stable on the domain."""

    H: np.ndarray
    mu: list  # list[ex.Expr], length p
    bounds: ex.JacobianBounds  # bounds of mu's Jacobian (p x n_z)
    D: list  # list of diagonal selector vectors, length p, each (n_z,)
    F: np.ndarray
    _compiled: list = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return len(self.mu)

    @property
    def n_z(self) -> int:
        return self.H.shape[1]

    def compiled(self):
        if self._compiled is None:
            self._compiled = [ex.compile_expr(e) for e in self.mu]
        return self._compiled

    def is_zero(self) -> bool:
        return all(ex.is_zero(e) for e in self.mu)


def jss_split(g, bounds: ex.JacobianBounds, policy: str = "lower",
              H_override=None) -> JssSplit:
    """Decompose g(z) = Hz + mu(z) with mu JSS.

    H entries come from the Jacobian-bound vertices per `policy`, or verbatim
    from `H_override`. An override that breaks sign stability of mu raises,
    naming the offending entry.
    """
    p, n_z = bounds.shape
    if len(g) != p:
        raise DecompositionError(f"{len(g)} expressions vs {p} Jacobian rows")
    if H_override is not None:
        H = as_matrix(H_override, "H override")
        if H.shape != (p, n_z):
            raise DecompositionError(f"H override shape {H.shape}, expected {(p, n_z)}")
    else:
        H = select_h(bounds, policy)
    mu_bounds = ex.JacobianBounds(bounds.lo - H, bounds.hi - H)
    bad = check_jss(mu_bounds)
    if bad is not None:
        i, j = bad
        raise DecompositionError(
            f"remainder is not Jacobian sign-stable at entry ({i},{j}): "
            f"[{mu_bounds.lo[i, j]:.6g}, {mu_bounds.hi[i, j]:.6g}]")
    mu = []
    center = None
    for i in range(p):
        e = g[i]
        for j in range(n_z):
            if H[i, j] != 0.0:
                e = ex.sub(e, ex.mul(ex.Const(H[i, j]), ex.Var(j, f"z{j+1}")))
        # rows with an identically-zero Jacobian enclosure are constants;
        # fold them so downstream evaluation skips the AST entirely
        if np.all(mu_bounds.lo[i] == 0.0) and np.all(mu_bounds.hi[i] == 0.0) \
                and not isinstance(e, ex.Const):
            if center is None:
                center = np.zeros(n_z)
            e = ex.Const(float(ex.evaluate(e, center)))
            if abs(e.value) < 1e-14:
                e = ex.ZERO
        mu.append(e)
    return JssSplit(H=H, mu=mu, bounds=mu_bounds,
                    D=selector_matrices(mu_bounds), F=jss_gain(mu_bounds))


def zero_split(p: int, n_z: int) -> JssSplit:
    """A structurally-zero remainder (used when a map is exactly linear)."""
    zb = ex.JacobianBounds(np.zeros((p, n_z)), np.zeros((p, n_z)))
    return JssSplit(H=np.zeros((p, n_z)), mu=[ex.ZERO] * p, bounds=zb,
                    D=[np.zeros(n_z)] * p, F=np.zeros((p, n_z)))


def tight_dec(split: JssSplit, i: int, z1, z2, ct_mode: bool = False):
    """Tight decomposition function for row i: mu_i(D^i z1 + (I - D^i) z2).

    In CT mode the i-th diagonal is pinned to the first argument (the
    self-coordinate is exempt from the monotonicity requirement). Accepts
    batched arguments with a trailing axis.
    """
    d = split.D[i]
    if ct_mode and i < split.n_z:
        d = d.copy()
        d[i] = 1.0
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    dd = d if z1.ndim == 1 else d[:, None]
    mix = dd * z1 + (1.0 - dd) * z2
    return split.compiled()[i](mix)


def tight_dec_vec(split: JssSplit, z1, z2, ct_mode: bool = False) -> np.ndarray:
    """All rows of the tight decomposition function, stacked."""
    z1 = np.asarray(z1, dtype=float)
    rows = [tight_dec(split, i, z1, z2, ct_mode) for i in range(split.p)]
    if z1.ndim == 1:
        return np.array([float(np.asarray(r)) for r in rows])
    batch = z1.shape[1]
    return np.vstack([np.broadcast_to(np.asarray(r, dtype=float), (batch,)) for r in rows])


@dataclass(frozen=True)
class LinearDecomposition:
    """Split of a linear map for embedding construction (Aup x1 - Adown x2 + ...)."""

    Aup: np.ndarray
    Adown: np.ndarray
    Bpos: np.ndarray
    Bneg: np.ndarray
    mode: str  # 'dt' | 'ct'


def linear_dec(Ag, Bg, mode: str) -> LinearDecomposition:
    """DT: positive/negative part split. CT: Metzler-style split keeping the
    diagonal on the increasing side."""
    Ag = as_matrix(Ag, "Ag")
    Bg = as_matrix(Bg, "Bg") if Bg is not None and np.size(Bg) else np.zeros((Ag.shape[0], 0))
    if mode not in ("dt", "ct"):
        raise DecompositionError(f"mode must be 'dt' or 'ct', got {mode!r}")
    if mode == "dt":
        Aup, Adown, _ = signed_split(Ag)
    else:
        if Ag.shape[0] != Ag.shape[1]:
            raise DecompositionError("CT linear decomposition needs square Ag")
        d, nd, _ = metzlerize(Ag)
        nd_pos, nd_neg, _ = signed_split(nd)
        Aup = nd_pos + d
        Adown = nd_neg
    Bpos, Bneg, _ = signed_split(Bg)
    return LinearDecomposition(Aup=Aup, Adown=Adown, Bpos=Bpos, Bneg=Bneg, mode=mode)
