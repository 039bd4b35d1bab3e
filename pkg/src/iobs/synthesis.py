"""Assembly and solution of the L1 (MILP) and H-infinity (MISDP) gain designs.

Decision variables are gamma, the positive diagonal Q, and the scaled gains
Ltil = Q L, Ntil = Q N; Ttil = Q - Ntil C and Mtil_x = Ttil A - Ltil C -
Ntil A2 are substituted identities, never free variables. Every absolute
value of an affine expression maps to one atom: a plus/minus split made
exact by a binary with big-M complementarity. Gains recover as X = Q^{-1} Xtil.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import comparison, embedding, exprcore as ex, optim
from .matops import as_matrix, map_box
from .model import PlantModel, ReformulatedPlant

log = logging.getLogger("iobs.synthesis")


class SynthesisError(RuntimeError):
    pass


class AssemblyError(SynthesisError):
    pass


class RecoveryError(SynthesisError):
    pass


@dataclass
class SynthesisOptions:
    epsilon: float = 1e-6
    big_m: float = 1e4
    positivity: bool = False
    fix_n: object = "auto"   # 'auto' | None (free) | matrix
    q_min: float = 1e-6
    q_max: float = 1e6
    l_support: object = None  # optional binary mask (n x l); None = dense
    n_support: object = None
    tie_break: float = 1e-6
    node_budget: int = 20000
    big_m_retries: int = 3


class Aff:
    """Sparse affine expression sum_i coef_i x_i + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def var(i, coef=1.0):
        return Aff({i: float(coef)})

    @staticmethod
    def of(c):
        return Aff(const=float(c))

    def copy(self):
        return Aff(self.terms, self.const)

    def __iadd__(self, other):
        if isinstance(other, Aff):
            for v, c in other.terms.items():
                self.terms[v] = self.terms.get(v, 0.0) + c
            self.const += other.const
        else:
            self.const += float(other)
        return self

    def __add__(self, other):
        out = self.copy()
        out += other
        return out

    def __sub__(self, other):
        if isinstance(other, Aff):
            return self + other.scaled(-1.0)
        return self + (-other)

    def scaled(self, a: float):
        return Aff({v: c * a for v, c in self.terms.items()}, self.const * a)

    def clean(self, tol=1e-14):
        self.terms = {v: c for v, c in self.terms.items() if abs(c) > tol}
        return self

    def is_zero(self):
        self.clean()
        return not self.terms and abs(self.const) < 1e-14

    def is_const(self):
        self.clean()
        return not self.terms

    def lead(self):
        items = sorted(self.terms.items())
        return items[0][1] if items else self.const

    def canonical_key(self):
        """Scale-normalized key so |a| and |c*a| share one atom (c != 0)."""
        self.clean()
        ld = self.lead()
        if ld == 0.0:
            return ("zero",), 0.0
        items = sorted(self.terms.items())
        key = tuple((v, round(c / ld, 12)) for v, c in items) + (round(self.const / ld, 12),)
        return key, abs(ld)

    def value(self, x) -> float:
        return self.const + sum(c * x[v] for v, c in self.terms.items())


@dataclass
class AbsAtom:
    key: tuple
    expr: Aff          # lead-normalized expression (lead coefficient +1)
    s_plus: int
    s_minus: int
    binary: int | None


class _Builder:
    """Variable/constraint accumulator shared by both norms."""

    def __init__(self, options: SynthesisOptions):
        self.opt = options
        self.names = []
        self.lb = []
        self.ub = []
        self.rows = []       # (terms dict, rhs) meaning terms . x <= rhs
        self.eqs = []
        self.atoms = {}      # canonical key -> AbsAtom
        self.binaries = []
        self.obj = {}

    def add_var(self, name, lo=None, hi=None):
        self.names.append(name)
        self.lb.append(lo)
        self.ub.append(hi)
        return len(self.names) - 1

    def add_le(self, expr: Aff, rhs: float):
        expr = expr.copy().clean()
        self.rows.append((dict(expr.terms), rhs - expr.const))

    def add_eq(self, expr: Aff, rhs: float):
        expr = expr.copy().clean()
        self.eqs.append((dict(expr.terms), rhs - expr.const))

    def _known_sign(self, expr: Aff):
        """Nonnegative combinations of q variables have a known sign."""
        signs = set()
        for v, c in expr.terms.items():
            if not self.names[v].startswith("q"):
                return None
            signs.add(c > 0)
        if len(signs) != 1:
            return None
        if signs == {True}:
            return "+" if expr.const >= 0 else None
        return "-" if expr.const <= 0 else None

    # nudges relaxations onto tight plus/minus splits; tight splits are always
    # feasible and penalty-minimal, so the gamma component of the optimum is
    # unchanged while interior-point iterates stop centering the splits
    SPLIT_PENALTY = 1e-6

    def _atom(self, expr: Aff) -> tuple[AbsAtom, float]:
        key, scale = expr.canonical_key()
        atom = self.atoms.get(key)
        if atom is None:
            canon = expr.scaled(1.0 / expr.lead())
            idx = len(self.atoms)
            sp = self.add_var(f"s+{idx}", 0.0, self.opt.big_m)
            sm = self.add_var(f"s-{idx}", 0.0, self.opt.big_m)
            b = self.add_var(f"b{idx}", 0.0, 1.0)
            self.binaries.append(b)
            self.obj[sp] = self.obj.get(sp, 0.0) + self.SPLIT_PENALTY
            self.obj[sm] = self.obj.get(sm, 0.0) + self.SPLIT_PENALTY
            self.add_eq(canon + Aff({sp: -1.0, sm: 1.0}), 0.0)
            self.add_le(Aff({sp: 1.0, b: -self.opt.big_m}), 0.0)
            self.add_le(Aff({sm: 1.0, b: self.opt.big_m}), self.opt.big_m)
            atom = AbsAtom(key=key, expr=canon, s_plus=sp, s_minus=sm, binary=b)
            self.atoms[key] = atom
        return atom, scale

    def abs_of(self, expr: Aff) -> Aff:
        """Affine expression representing |expr| (exact at integral points)."""
        expr = expr.copy().clean()
        if expr.is_zero():
            return Aff.of(0.0)
        if expr.is_const():
            return Aff.of(abs(expr.const))
        known = self._known_sign(expr)
        if known == "+":
            return expr
        if known == "-":
            return expr.scaled(-1.0)
        if self.opt.positivity:
            # sign-restriction mode: force expr >= 0 and use it as its own abs
            self.add_le(expr.scaled(-1.0), 0.0)
            return expr
        atom, scale = self._atom(expr)
        return Aff({atom.s_plus: scale, atom.s_minus: scale})

    def neg_part(self, expr: Aff) -> Aff:
        """Affine expression for max(-expr, 0), via the atom of expr."""
        expr = expr.copy().clean()
        if expr.is_const():
            return Aff.of(max(-expr.const, 0.0))
        if self.opt.positivity:
            self.add_le(expr.scaled(-1.0), 0.0)
            return Aff.of(0.0)
        atom, scale = self._atom(expr)
        if expr.lead() > 0:
            return Aff({atom.s_minus: scale})
        return Aff({atom.s_plus: scale})


@dataclass
class SynthesisProgram:
    kind: str                      # 'milp' | 'misdp'
    base: object                   # LinearProgram | SdpProblem
    binaries: list
    gamma_idx: int
    q_idx: list
    l_idx: dict
    n_idx: dict
    fixed_n: np.ndarray | None
    fixed_q: np.ndarray | None
    atoms: list
    names: list
    sigma: int
    beta: int
    has_z_terms: bool
    options: SynthesisOptions
    ref: ReformulatedPlant

    def extract_gains(self, x):
        """Recover (T, L, N, Q) from a solution vector."""
        ref = self.ref
        n, l = ref.plant.n, ref.plant.l
        q = np.array([self.fixed_q[i] if self.q_idx[i] is None else x[self.q_idx[i]]
                      for i in range(n)])
        Ltil = np.zeros((n, l))
        for (i, j), v in self.l_idx.items():
            Ltil[i, j] = x[v]
        if self.fixed_n is not None:
            N = self.fixed_n.copy()
            Ntil = np.diag(q) @ N
        else:
            Ntil = np.zeros((n, l))
            for (i, j), v in self.n_idx.items():
                Ntil[i, j] = x[v]
        Ttil = np.diag(q) - Ntil @ ref.C
        L, T, N = recover_gains(np.diag(q), Ltil, Ttil, Ntil, C=ref.C)
        return T, L, N, q


def _resolve_fix_n(ref: ReformulatedPlant, options: SynthesisOptions):
    fix = options.fix_n
    bilinear_case = ref.sigma == 0 and ref.beta == 1
    if isinstance(fix, str) and fix == "auto":
        if bilinear_case:
            log.info("CT plant with V != 0: defaulting to the N = 0 reduction "
                     "to avoid the bilinear Q-N coupling")
            return np.zeros((ref.plant.n, ref.plant.l))
        return None
    if fix is None:
        if bilinear_case:
            raise AssemblyError(
                "CT design with V != 0 makes Q and N couple bilinearly; fix N "
                "(e.g. the N = 0 reduction) to obtain a solvable program")
        return None
    return as_matrix(fix, "fix_n")


def assemble(ref: ReformulatedPlant, norm: str, options: SynthesisOptions | None = None,
             fix_q=None, z_mult=None) -> SynthesisProgram:
    """Build the gain-design program for norm 'l1' (MILP) or 'hinf' (MISDP).

    `fix_q`/`z_mult` serve the alternation heuristic: with q pinned numerically
    the bilinear CT-with-noise case becomes affine in a frozen Z multiplier.
    """
    if norm not in ("l1", "hinf"):
        raise AssemblyError(f"norm must be 'l1' or 'hinf', got {norm!r}")
    options = options or SynthesisOptions()
    plant = ref.plant
    n, l, m, n_w, n_v = plant.n, plant.l, plant.m, plant.n_w, plant.n_v
    sigma, beta = ref.sigma, ref.beta
    eps = options.epsilon

    fixed_n = _resolve_fix_n(ref, options) if fix_q is None else None
    fixed_q = None if fix_q is None else np.asarray(fix_q, dtype=float).ravel()

    bld = _Builder(options)
    gamma = bld.add_var("gamma", eps, None)
    bld.obj[gamma] = 1.0
    q_idx = []
    for i in range(n):
        if fixed_q is not None:
            q_idx.append(None)
        else:
            q_idx.append(bld.add_var(f"q{i+1}", options.q_min, options.q_max))

    def q_aff(i):
        return Aff.of(fixed_q[i]) if fixed_q is not None else Aff.var(q_idx[i])

    def support(mask):
        if mask is None:
            return None
        return np.asarray(mask, dtype=bool)

    l_sup = support(options.l_support)
    n_sup = support(options.n_support)
    l_idx = {}
    for i in range(n):
        for j in range(l):
            if l_sup is None or l_sup[i, j]:
                l_idx[(i, j)] = bld.add_var(f"Lt{i+1}{j+1}")
    n_idx = {}
    if fixed_n is None:
        for i in range(n):
            for j in range(l):
                if n_sup is None or n_sup[i, j]:
                    n_idx[(i, j)] = bld.add_var(f"Nt{i+1}{j+1}")

    def ntil(i, j) -> Aff:
        if fixed_n is not None:
            return q_aff(i).scaled(fixed_n[i, j]) if fixed_n[i, j] else Aff.of(0.0)
        v = n_idx.get((i, j))
        return Aff.var(v) if v is not None else Aff.of(0.0)

    def ltil(i, j) -> Aff:
        v = l_idx.get((i, j))
        return Aff.var(v) if v is not None else Aff.of(0.0)

    C, A, A2 = ref.C, ref.A, ref.A2
    Ttil = [[(q_aff(i) if i == j else Aff.of(0.0)) for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(n):
            for k in range(l):
                if C[k, j]:
                    Ttil[i][j] = Ttil[i][j] - ntil(i, k).scaled(C[k, j])

    Mtil = [[Aff.of(0.0) for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = Aff.of(0.0)
            for k in range(n):
                if A[k, j]:
                    acc += Ttil[i][k].scaled(A[k, j])
            for k in range(l):
                if C[k, j]:
                    acc = acc - ltil(i, k).scaled(C[k, j])
                if A2[k, j]:
                    acc = acc - ntil(i, k).scaled(A2[k, j])
            Mtil[i][j] = acc.clean()

    W, W2, V = plant.W, ref.W2, plant.V
    F_phi, F_psi = ref.F_phi, ref.F_psi
    F_rx, F_rw, F_ru = ref.F_rho_x, ref.F_rho_w, ref.F_rho_u

    _absT = {}
    _absL = {}
    _absN = {}

    def get_abs(cache, key, expr_fn):
        if key not in cache:
            cache[key] = bld.abs_of(expr_fn())
        return cache[key]

    # Delta = |Ttil W - Ntil W2| + |Ntil| F_rho_w          (n x n_w)
    Delta = [[Aff.of(0.0)] * n_w for _ in range(n)]
    for i in range(n):
        for j in range(n_w):
            expr = Aff.of(0.0)
            for k in range(n):
                if W[k, j]:
                    expr += Ttil[i][k].scaled(W[k, j])
            for k in range(l):
                if W2[k, j]:
                    expr = expr - ntil(i, k).scaled(W2[k, j])
            acc = bld.abs_of(expr)
            for k in range(l):
                if F_rw[k, j]:
                    acc += get_abs(_absN, (i, k), lambda i=i, k=k: ntil(i, k)).scaled(F_rw[k, j])
            Delta[i][j] = acc

    # Gamma = |Ntil| F_rho_u                               (n x m)
    Gam = [[Aff.of(0.0)] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = Aff.of(0.0)
            for k in range(l):
                if F_ru[k, j]:
                    acc += get_abs(_absN, (i, k), lambda i=i, k=k: ntil(i, k)).scaled(F_ru[k, j])
            Gam[i][j] = acc

    # Phi = |Ltil V| + sigma |Ntil V| + (1 - sigma) Z      (n x n_v)
    has_z = False
    Phi = [[Aff.of(0.0)] * n_v for _ in range(n)]
    for i in range(n):
        for j in range(n_v):
            lv = Aff.of(0.0)
            nv = Aff.of(0.0)
            for k in range(l):
                if V[k, j]:
                    lv += ltil(i, k).scaled(V[k, j])
                    nv += ntil(i, k).scaled(V[k, j])
            acc = bld.abs_of(lv)
            if sigma == 1:
                acc += bld.abs_of(nv)
            elif beta == 1:
                # Z = (|Mtil_x| - Mtil_x^m) |N V| = diag(2 (Mtil_x_ii)^-) |N V|
                has_z = True
                if fixed_q is not None and z_mult is not None:
                    # alternation round: frozen multiplier, N = Q^{-1} Ntil free
                    acc += bld.abs_of(nv).scaled(float(z_mult[i]) / fixed_q[i])
                else:
                    nv_num = abs(sum((fixed_n[i, k] * V[k, j]) for k in range(l)))
                    if nv_num:
                        acc += bld.neg_part(Mtil[i][i]).scaled(2.0 * nv_num)
            Phi[i][j] = acc

    # Omega = sigma |Mtil| + (1-sigma) Mtil^m + |Ttil| F_phi
    #         + |Ltil| F_psi + |Ntil| F_rho_x              (n x n)
    Omega = [[Aff.of(0.0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if sigma == 1 or i != j:
                acc = bld.abs_of(Mtil[i][j])
            else:
                acc = Mtil[i][i].copy()
            for k in range(n):
                if F_phi[k, j]:
                    acc += get_abs(_absT, (i, k), lambda i=i, k=k: Ttil[i][k].copy()).scaled(F_phi[k, j])
            for k in range(l):
                if F_psi[k, j]:
                    acc += get_abs(_absL, (i, k), lambda i=i, k=k: ltil(i, k)).scaled(F_psi[k, j])
                if F_rx[k, j]:
                    acc += get_abs(_absN, (i, k), lambda i=i, k=k: ntil(i, k)).scaled(F_rx[k, j])
            Omega[i][j] = acc

    # lexicographic tie-break on ||Ltil||_1 + ||Ntil||_1 through aux splits;
    # a matching reward on the q's resolves the row-scaling degeneracy toward
    # large q (small recovered gains), without touching the optimal gamma
    if options.tie_break:
        for idx_map, tag in ((l_idx, "L"), (n_idx, "N")):
            for (i, j), v in sorted(idx_map.items()):
                tp = bld.add_var(f"t+{tag}{i}{j}", 0.0, None)
                tm = bld.add_var(f"t-{tag}{i}{j}", 0.0, None)
                bld.add_eq(Aff({v: 1.0, tp: -1.0, tm: 1.0}), 0.0)
                bld.obj[tp] = options.tie_break
                bld.obj[tm] = options.tie_break
        if fixed_q is None:
            for i in range(n):
                bld.obj[q_idx[i]] = bld.obj.get(q_idx[i], 0.0) - options.tie_break

    if norm == "l1":
        for j in range(n_w):
            col = Aff.of(0.0)
            for i in range(n):
                col += Delta[i][j]
            bld.add_le(col + Aff({gamma: -1.0}), -eps)
        for j in range(m):
            col = Aff.of(0.0)
            for i in range(n):
                col += Gam[i][j]
            bld.add_le(col + Aff({gamma: -1.0}), -eps)
        for j in range(n_v):
            col = Aff.of(0.0)
            for i in range(n):
                col += Phi[i][j]
            bld.add_le(col + Aff({gamma: -1.0}), -eps)
        for j in range(n):
            col = Aff.of(0.0)
            for i in range(n):
                col += Omega[i][j]
            if sigma == 1:
                col = col - q_aff(j)
            bld.add_le(col, -1.0 - eps)

    nv_total = len(bld.names)
    c = np.zeros(nv_total)
    for v, coef in bld.obj.items():
        c[v] = coef

    def materialize(pairs):
        if not pairs:
            return None, None
        M = np.zeros((len(pairs), nv_total))
        rhs = np.zeros(len(pairs))
        for r, (terms, b) in enumerate(pairs):
            for v, coef in terms.items():
                M[r, v] = coef
            rhs[r] = b
        return M, rhs

    A_ub, b_ub = materialize(bld.rows)
    A_eq, b_eq = materialize(bld.eqs)
    bnds = list(zip(bld.lb, bld.ub))

    if norm == "l1":
        base = optim.LinearProgram(c=c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq,
                                   b_eq=b_eq, bounds=bnds)
        kind = "milp"
    else:
        nt = n_w + n_v + m
        BPG = [[None] * nt for _ in range(n)]
        for i in range(n):
            for j in range(n_w):
                BPG[i][j] = Delta[i][j]
            for j in range(n_v):
                BPG[i][n_w + j] = Phi[i][j]
            for j in range(m):
                BPG[i][n_w + n_v + j] = Gam[i][j]
        entries = {}
        if sigma == 1:
            dim = 3 * n + nt
            for i in range(n):
                entries[(i, i)] = q_aff(i)
                entries[(n + i, n + i)] = q_aff(i)
                entries[(2 * n + nt + i, 2 * n + nt + i)] = Aff.var(gamma)
                entries[(n + i, 2 * n + nt + i)] = Aff.of(1.0)
            for j in range(nt):
                entries[(2 * n + j, 2 * n + j)] = Aff.var(gamma)
            for i in range(n):
                for j in range(n):
                    if not Omega[i][j].is_zero():
                        entries[(i, n + j)] = Omega[i][j]
                for j in range(nt):
                    if not BPG[i][j].is_zero():
                        entries[(i, 2 * n + j)] = BPG[i][j]
            orientation = ">="
            shift = eps
        else:
            dim = 2 * n + nt
            for i in range(n):
                entries[(i, n + nt + i)] = Aff.of(1.0)
                entries[(n + nt + i, n + nt + i)] = Aff({gamma: -1.0})
            for j in range(nt):
                entries[(n + j, n + j)] = Aff({gamma: -1.0})
            for i in range(n):
                for j in range(i, n):
                    acc = Omega[i][i].scaled(2.0) if i == j else Omega[i][j] + Omega[j][i]
                    if not acc.is_zero():
                        entries[(i, j)] = acc
                for j in range(nt):
                    if not BPG[i][j].is_zero():
                        entries[(i, n + j)] = BPG[i][j]
            orientation = "<="
            shift = -eps

        F0 = np.zeros((dim, dim))
        coeffs = {}
        for (r, cc), expr in entries.items():
            expr = expr.copy().clean()
            if expr.const:
                F0[r, cc] += expr.const
                if r != cc:
                    F0[cc, r] += expr.const
            for v, coef in expr.terms.items():
                Fv = coeffs.setdefault(v, np.zeros((dim, dim)))
                Fv[r, cc] += coef
                if r != cc:
                    Fv[cc, r] += coef
        F0 = F0 - shift * np.eye(dim)  # block >= eps I  (DT) / block <= -eps I (CT)
        block = optim.SdpBlock(F0=F0, coeffs=coeffs, orientation=orientation)
        base = optim.SdpProblem(c=c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                                bounds=bnds, blocks=[block])
        kind = "misdp"

    return SynthesisProgram(kind=kind, base=base, binaries=list(bld.binaries),
                            gamma_idx=gamma, q_idx=q_idx, l_idx=l_idx, n_idx=n_idx,
                            fixed_n=fixed_n, fixed_q=fixed_q,
                            atoms=list(bld.atoms.values()), names=bld.names,
                            sigma=sigma, beta=beta, has_z_terms=has_z,
                            options=options, ref=ref)


# ---------------------------------------------------------------------------
# Gain recovery / design driver
# ---------------------------------------------------------------------------

def recover_gains(Q, Ltil, Ttil, Ntil, C=None, tol: float = 1e-8):
    """X = Q^{-1} Xtil for X in {L, T, N}; Q diagonal with positive entries."""
    Q = as_matrix(Q, "Q")
    q = np.diag(Q)
    if np.any(np.abs(q) <= 1e-12):
        raise RecoveryError("Q is numerically singular")
    inv = np.diag(1.0 / q)
    L = inv @ as_matrix(Ltil, "Ltil")
    T = inv @ as_matrix(Ttil, "Ttil")
    N = inv @ as_matrix(Ntil, "Ntil")
    if C is not None:
        resid = T + N @ as_matrix(C, "C") - np.eye(T.shape[0])
        if np.max(np.abs(resid)) > tol:
            raise RecoveryError(f"recovered gains violate T + NC = I by "
                                f"{np.max(np.abs(resid)):.3g}")
    return L, T, N


@dataclass
class SynthesisResult:
    status: str               # 'optimal' | 'infeasible' | 'gap_limit' | 'numerical_failure'
    norm: str
    T: np.ndarray | None = None
    L: np.ndarray | None = None
    N: np.ndarray | None = None
    gamma: float | None = None
    certificate: np.ndarray | None = None   # p (L1) or q (H-inf)
    certified_gamma: float | None = None
    solver_stats: dict = None
    M_x: np.ndarray | None = None
    M_w: np.ndarray | None = None
    M_v: np.ndarray | None = None
    M_u: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _solve_program(prog: SynthesisProgram) -> optim.Solution:
    wrapper = optim.MixedIntegerWrapper(prog.base, prog.binaries,
                                        abs_gap=optim.MILP_GAP if prog.kind == "milp"
                                        else optim.MISDP_GAP,
                                        node_budget=prog.options.node_budget)
    if prog.kind == "milp":
        return optim.solve_milp(wrapper)
    return optim.solve_misdp(wrapper)


def _big_m_strained(prog: SynthesisProgram, x) -> bool:
    limit = prog.options.big_m * (1.0 - 1e-6)
    for atom in prog.atoms:
        if x[atom.s_plus] >= limit or x[atom.s_minus] >= limit:
            return True
    return False


def design(ref: ReformulatedPlant, norm: str,
           options: SynthesisOptions | None = None) -> SynthesisResult:
    """Solve the gain design, recover gains, and re-certify them post hoc."""
    options = options or SynthesisOptions()
    t0 = time.perf_counter()
    attempt = 0
    while True:
        prog = assemble(ref, norm, options)
        sol = _solve_program(prog)
        strained = sol.status == "optimal" and _big_m_strained(prog, sol.x)
        # an infeasible verdict is only trustworthy once the big-M bounds are
        # demonstrably slack, so those also re-solve with a larger constant
        if (strained or sol.status == "infeasible") and attempt < options.big_m_retries:
            attempt += 1
            options = SynthesisOptions(**{**options.__dict__,
                                          "big_m": options.big_m * 10.0})
            if strained:
                log.warning("active absolute-value part within tolerance of "
                            "big-M; retrying with big_m=%g", options.big_m)
            if strained or sol.status == "infeasible":
                continue
        if strained:
            log.warning("big-M still strained after %d retries", attempt)
        break
    stats = dict(sol.stats or {})
    stats["wall_time"] = time.perf_counter() - t0
    stats["binaries"] = len(prog.binaries)
    if sol.status in ("infeasible", "unbounded", "numerical_failure"):
        status = "infeasible" if sol.status == "infeasible" else sol.status
        return SynthesisResult(status=status, norm=norm, solver_stats=stats)
    T, L, N, q = prog.extract_gains(sol.x)
    gamma = float(sol.x[prog.gamma_idx])
    feasible, cert_gamma, cert = feasibility_check(ref, T, L, N, norm,
                                                   epsilon=options.epsilon,
                                                   q_min=options.q_min,
                                                   q_max=options.q_max)
    if not feasible:
        log.warning("post-hoc certification of synthesized gains failed")
        return SynthesisResult(status="numerical_failure", norm=norm,
                               solver_stats=stats)
    from .model import observer_matrices as _om
    M_x, M_w, M_v, M_u = _om(ref, T, L, N)
    status = "optimal" if sol.status == "optimal" else sol.status
    return SynthesisResult(status=status, norm=norm, T=T, L=L, N=N, gamma=gamma,
                           certificate=cert, certified_gamma=cert_gamma,
                           solver_stats=stats, M_x=M_x, M_w=M_w, M_v=M_v, M_u=M_u)


def design_alternating(ref: ReformulatedPlant, norm: str,
                       options: SynthesisOptions | None = None,
                       rounds: int = 5) -> SynthesisResult:
    """Heuristic for the bilinear CT-with-noise case: alternate between fixing
    N (exact affine program) and fixing Q with a frozen Z multiplier. The
    returned gains always carry a post-hoc exact certificate."""
    options = options or SynthesisOptions()
    if isinstance(options.fix_n, str):
        options = SynthesisOptions(**{**options.__dict__,
                                      "fix_n": np.zeros((ref.plant.n, ref.plant.l))})
    best = design(ref, norm, options)
    if not best.ok or rounds <= 1:
        return best
    for _ in range(rounds - 1):
        M_x = best.M_x
        z_mult = 2.0 * np.maximum(-np.diag(M_x), 0.0)
        q_fix = np.asarray(best.certificate, dtype=float).ravel()
        free_opts = SynthesisOptions(**{**options.__dict__, "fix_n": None})
        try:
            prog = assemble(ref, norm, free_opts, fix_q=q_fix, z_mult=z_mult)
        except AssemblyError:
            break
        sol = _solve_program(prog)
        if not sol.ok:
            break
        T, L, N, _ = prog.extract_gains(sol.x)
        feasible, cert_gamma, cert = feasibility_check(ref, T, L, N, norm,
                                                       epsilon=options.epsilon)
        if feasible and cert_gamma < (best.certified_gamma or np.inf) - 1e-9:
            from .model import observer_matrices as _om
            M = _om(ref, T, L, N)
            best = SynthesisResult(status="optimal", norm=norm, T=T, L=L, N=N,
                                   gamma=cert_gamma, certificate=cert,
                                   certified_gamma=cert_gamma,
                                   solver_stats={"heuristic": "alternation"},
                                   M_x=M[0], M_w=M[1], M_v=M[2], M_u=M[3])
            options = SynthesisOptions(**{**options.__dict__, "fix_n": best.N})
        else:
            break
    return best


def feasibility_check(ref: ReformulatedPlant, T, L, N, norm: str,
                      epsilon: float = 1e-6, q_min: float = 1e-6,
                      q_max: float = 1e6):
    """With gains fixed, the certificate search is a plain LP (L1) or SDP
    (H-inf) in (gamma, p or q). Returns (feasible, gamma, certificate)."""
    obs = embedding.build_observer(ref, T, L, N)
    cs = comparison.build_comparison(obs)
    n = cs.Ax.shape[0]
    if norm == "l1":
        # vars: p (n), gamma
        nv = n + 1
        c = np.zeros(nv); c[n] = 1.0
        rows = []
        rhs = []
        sgn = 1.0 if cs.mode == "dt" else 0.0
        for j in range(n):
            row = np.zeros(nv)
            row[:n] = cs.Ax[:, j]
            row[j] -= sgn
            rows.append(row); rhs.append(-1.0 - epsilon)
        for j in range(cs.B.shape[1]):
            row = np.zeros(nv)
            row[:n] = cs.B[:, j]
            row[n] = -1.0
            rows.append(row); rhs.append(-epsilon)
        bounds = [(q_min, q_max)] * n + [(epsilon, None)]
        sol = optim.solve_lp(optim.LinearProgram(c=c, A_ub=np.array(rows),
                                                 b_ub=np.array(rhs), bounds=bounds))
        if not sol.ok:
            return False, None, None
        p = sol.x[:n]; gamma = float(sol.x[n])
        rep = comparison.verify_l1_certificate(cs, p, gamma)
        if not rep.ok:
            return False, None, None
        return True, gamma, p
    if norm == "hinf":
        F0, Fq, Fg = comparison.hinf_block_parts(cs.Ax, cs.B, cs.mode)
        dim = F0.shape[0]
        nv = n + 1
        c = np.zeros(nv); c[n] = 1.0
        shift = epsilon if cs.mode == "dt" else -epsilon
        coeffs = {i: Fq[i] for i in range(n)}
        coeffs[n] = Fg
        block = optim.SdpBlock(F0=F0 - shift * np.eye(dim), coeffs=coeffs,
                               orientation=">=" if cs.mode == "dt" else "<=")
        bounds = [(q_min, q_max)] * n + [(epsilon, None)]
        sdp = optim.SdpProblem(c=c, bounds=bounds, blocks=[block])
        sol = optim.solve_sdp(sdp)
        if not sol.ok:
            return False, None, None
        q = sol.x[:n]; gamma = float(sol.x[n])
        rep = comparison.verify_hinf_certificate(cs, q, gamma)
        if not rep.ok:
            return False, None, None
        return True, gamma, q
    raise SynthesisError(f"unknown norm {norm!r}")


# ---------------------------------------------------------------------------
# Coordinate transformation
# ---------------------------------------------------------------------------

def coordinate_transform(plant: PlantModel, S) -> PlantModel:
    """Rewrite the plant in coordinates z = S x (f, h composed through S^{-1})."""
    S = as_matrix(S, "S")
    n = plant.n
    if S.shape != (n, n):
        raise SynthesisError(f"S must be {n}x{n}")
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e14:
        raise SynthesisError(f"S is numerically singular (cond {cond:.3g})")
    log.info("coordinate transform: cond(S) = %.4g", cond)
    Si = np.linalg.inv(S)
    # x_k -> sum_j Si[k, j] z_j
    sub = {}
    for k in range(n):
        acc = ex.ZERO
        for j in range(n):
            if Si[k, j]:
                acc = ex.add(acc, ex.mul(ex.Const(Si[k, j]), ex.Var(j, f"x{j+1}")))
        sub[k] = acc
    f_hat = []
    for i in range(n):
        acc = ex.ZERO
        for j in range(n):
            if S[i, j]:
                acc = ex.add(acc, ex.mul(ex.Const(S[i, j]), ex.substitute(plant.f[j], sub)))
        f_hat.append(acc)
    h_hat = [ex.substitute(plant.h[i], sub) for i in range(plant.l)]
    return PlantModel(n=n, l=plant.l, m=plant.m, n_w=plant.n_w, n_v=plant.n_v,
                      time=plant.time, f=f_hat, h=h_hat, B=S @ plant.B,
                      W=S @ plant.W, V=plant.V.copy(), D=plant.D.copy(),
                      w_box=plant.w_box, v_box=plant.v_box, u_box=plant.u_box,
                      x0_box=map_box(S, plant.x0_box),
                      domain_box=map_box(S, plant.domain_box),
                      params=dict(plant.params), input_exprs=plant.input_exprs,
                      dt_step=plant.dt_step)


def find_transform(A, C, poles, mode: str = "ct"):
    """Observer-pole placement (single output, Ackermann) followed by the
    diagonalizing change of coordinates: returns (L0, S) with S (A - L0 C) S^{-1}
    diagonal."""
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    n = A.shape[0]
    if C.shape != (1, n):
        raise SynthesisError("find_transform supports single-output pairs only")
    poles = np.asarray(poles, dtype=float).ravel()
    if poles.size != n:
        raise SynthesisError(f"need {n} poles")
    if np.unique(np.round(poles, 12)).size != n:
        raise SynthesisError("poles must be distinct to diagonalize")
    stable = np.all(poles < 0) if mode == "ct" else np.all(np.abs(poles) < 1)
    if not stable:
        raise SynthesisError(f"poles are not stable for {mode} semantics")
    obsv = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    if np.linalg.matrix_rank(obsv, tol=1e-10 * np.linalg.norm(obsv)) < n:
        raise SynthesisError("pair (A, C) is unobservable")
    coeffs = np.poly(poles)  # desired characteristic polynomial
    qa = np.zeros_like(A)
    for c_k in coeffs:
        qa = qa @ A + c_k * np.eye(n)
    e_n = np.zeros((n, 1)); e_n[-1, 0] = 1.0
    L0 = qa @ np.linalg.solve(obsv, e_n)
    Acl = A - L0 @ C
    eigvals, eigvecs = np.linalg.eig(Acl)
    if np.max(np.abs(eigvals.imag)) > 1e-8:
        raise SynthesisError("closed-loop eigenvalues are not real")
    eigvals = eigvals.real
    eigvecs = eigvecs.real
    order = []
    used = set()
    for p in poles:
        k = int(np.argmin([np.inf if j in used else abs(eigvals[j] - p)
                           for j in range(n)]))
        used.add(k)
        order.append(k)
    Vm = eigvecs[:, order]
    # deterministic eigenvector normalization
    for j in range(n):
        col = Vm[:, j]
        k = int(np.argmax(np.abs(col)))
        Vm[:, j] = col / col[k]
    S = np.linalg.inv(Vm)
    D = S @ Acl @ np.linalg.inv(S)
    if np.max(np.abs(D - np.diag(np.diag(D)))) > 1e-8 * max(1.0, np.max(np.abs(D))):
        raise SynthesisError("diagonalization failed")
    return L0, S
