"""Dense LP / SDP solving and deterministic branch-and-bound mixed-integer layers.

Continuous relaxations go to mature solvers (scipy's HiGHS for LPs, cvxopt's
interior-point cone solver for SDPs); the mixed-integer layer is a best-first
branch and bound over declared binary variables with most-fractional
branching and deterministic tie-breaking.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


class SolverError(RuntimeError):
    pass


INT_TOL = 1e-6
MILP_GAP = 1e-6
MISDP_GAP = 1e-5


@dataclass
class LinearProgram:
    """min c'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  bounds[i] = (lo, hi)."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None  # per-variable (lo, hi), None = free side

    def n_vars(self) -> int:
        return np.asarray(self.c).size

    def with_extra_rows(self, A_new, b_new) -> "LinearProgram":
        A = np.asarray(A_new, dtype=float).reshape(-1, self.n_vars())
        b = np.asarray(b_new, dtype=float).ravel()
        if self.A_ub is None:
            return LinearProgram(self.c, A, b, self.A_eq, self.b_eq, self.bounds)
        return LinearProgram(self.c, np.vstack([self.A_ub, A]),
                             np.concatenate([self.b_ub, b]),
                             self.A_eq, self.b_eq, self.bounds)

    def with_bounds(self, updates: dict) -> "LinearProgram":
        bounds = list(self.bounds) if self.bounds is not None \
            else [(None, None)] * self.n_vars()
        for i, (lo, hi) in updates.items():
            old_lo, old_hi = bounds[i]
            new_lo = lo if old_lo is None else (old_lo if lo is None else max(lo, old_lo))
            new_hi = hi if old_hi is None else (old_hi if hi is None else min(hi, old_hi))
            bounds[i] = (new_lo, new_hi)
        return LinearProgram(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, bounds)


@dataclass
class Solution:
    status: str  # 'optimal' | 'infeasible' | 'unbounded' | 'gap_limit' | 'numerical_failure'
    x: np.ndarray | None = None
    objective: float | None = None
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_lp(lp: LinearProgram) -> Solution:
    """Solve a dense LP; optimal objective accurate to ~1e-8."""
    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * lp.n_vars()
    res = linprog(lp.c, A_ub=lp.A_ub, b_ub=lp.b_ub, A_eq=lp.A_eq, b_eq=lp.b_eq,
                  bounds=bounds, method="highs")
    if res.status == 0:
        return Solution("optimal", np.asarray(res.x, dtype=float), float(res.fun),
                        {"iterations": int(getattr(res, "nit", 0) or 0)})
    if res.status == 2:
        return Solution("infeasible")
    if res.status == 3:
        return Solution("unbounded")
    return Solution("numerical_failure", stats={"message": res.message})


# ---------------------------------------------------------------------------
# Semidefinite programs
# ---------------------------------------------------------------------------

@dataclass
class SdpBlock:
    """Affine symmetric-valued map F0 + sum_i x_i F[i], constrained PSD.

    `orientation` '>=': block must be positive semidefinite; '<=': negative.
    Internally '<=' blocks are negated into the PSD convention.
    """

    F0: np.ndarray
    coeffs: dict  # var index -> symmetric matrix
    orientation: str = ">="

    @property
    def dim(self) -> int:
        return self.F0.shape[0]


@dataclass
class SdpProblem:
    """min c'x with linear inequalities, equalities, bounds, and SDP blocks."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None
    blocks: list = field(default_factory=list)

    def n_vars(self) -> int:
        return np.asarray(self.c).size

    def with_extra_rows(self, A_new, b_new) -> "SdpProblem":
        A = np.asarray(A_new, dtype=float).reshape(-1, self.n_vars())
        b = np.asarray(b_new, dtype=float).ravel()
        if self.A_ub is None:
            return SdpProblem(self.c, A, b, self.A_eq, self.b_eq, self.bounds, self.blocks)
        return SdpProblem(self.c, np.vstack([self.A_ub, A]),
                          np.concatenate([self.b_ub, b]),
                          self.A_eq, self.b_eq, self.bounds, self.blocks)

    def with_bounds(self, updates: dict) -> "SdpProblem":
        bounds = list(self.bounds) if self.bounds is not None \
            else [(None, None)] * self.n_vars()
        for i, (lo, hi) in updates.items():
            old_lo, old_hi = bounds[i]
            new_lo = lo if old_lo is None else (old_lo if lo is None else max(lo, old_lo))
            new_hi = hi if old_hi is None else (old_hi if hi is None else min(hi, old_hi))
            bounds[i] = (new_lo, new_hi)
        return SdpProblem(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq,
                          bounds, self.blocks)


def _assemble_cone(sdp: SdpProblem):
    """Stack linear rows, variable bounds, and PSD blocks into conelp form."""
    nv = sdp.n_vars()
    rows_G = []
    rows_h = []
    if sdp.A_ub is not None and len(sdp.A_ub):
        rows_G.append(np.asarray(sdp.A_ub, dtype=float))
        rows_h.append(np.asarray(sdp.b_ub, dtype=float).ravel())
    bounds = sdp.bounds if sdp.bounds is not None else [(None, None)] * nv
    bl = []
    bh = []
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None:
            row = np.zeros(nv); row[i] = -1.0
            bl.append(row); bh.append(-lo)
        if hi is not None:
            row = np.zeros(nv); row[i] = 1.0
            bl.append(row); bh.append(hi)
    if bl:
        rows_G.append(np.array(bl)); rows_h.append(np.array(bh))
    if rows_G:
        Gl = np.vstack(rows_G)
        hl = np.concatenate(rows_h)
    else:
        Gl = np.zeros((0, nv))
        hl = np.zeros(0)

    sdims = []
    Gs_parts = []
    hs_parts = []
    for blk in sdp.blocks:
        sign = 1.0 if blk.orientation == ">=" else -1.0
        F0 = sign * blk.F0
        coeffs = {i: sign * F for i, F in blk.coeffs.items()}
        # congruence rescaling D M D (feasibility-invariant, helps conditioning)
        mags = np.abs(F0).max(axis=1) if blk.dim else np.zeros(0)
        for F in coeffs.values():
            mags = np.maximum(mags, np.abs(F).max(axis=1))
        d = 1.0 / np.sqrt(np.clip(mags, 1e-8, None))
        D = np.outer(d, d)
        dim = blk.dim
        G = np.zeros((dim * dim, nv))
        for i, F in coeffs.items():
            G[:, i] = (-(F * D)).reshape(-1)
        sdims.append(dim)
        Gs_parts.append(G)
        hs_parts.append((F0 * D).reshape(-1))

    G = np.vstack([Gl] + Gs_parts)
    h = np.concatenate([hl] + hs_parts)
    dims = {"l": Gl.shape[0], "q": [], "s": sdims}
    return G, h, dims


def solve_sdp(sdp: SdpProblem, duality_gap: float = 1e-7) -> Solution:
    """Primal-dual interior-point solve through cvxopt's cone LP solver,
    with a robust-KKT retry and a phase-1 infeasibility prover."""
    return _solve_sdp_impl(sdp, duality_gap, allow_phase1=True)


def _solve_sdp_impl(sdp: SdpProblem, duality_gap: float = 1e-7,
                    allow_phase1: bool = True) -> Solution:
    from cvxopt import matrix, solvers

    G, h, dims = _assemble_cone(sdp)
    c = matrix(np.asarray(sdp.c, dtype=float))
    A = None if sdp.A_eq is None else matrix(np.asarray(sdp.A_eq, dtype=float))
    b = None if sdp.b_eq is None else matrix(np.asarray(sdp.b_eq, dtype=float).ravel())
    base_opts = {"show_progress": False, "maxiters": 200,
                 "abstol": duality_gap, "reltol": duality_gap, "feastol": 1e-9}
    sol = None
    for attempt, opts in enumerate((base_opts,
                                    {**base_opts, "kktreg": 1e-9, "feastol": 1e-8},
                                    {**base_opts, "kktreg": 1e-7, "feastol": 1e-7,
                                     "abstol": 1e-6, "reltol": 1e-6})):
        kkt = None if attempt == 0 else "ldl"
        try:
            if A is None:
                sol = solvers.conelp(c, matrix(G), matrix(h), dims,
                                     kktsolver=kkt, options=opts)
            else:
                sol = solvers.conelp(c, matrix(G), matrix(h), dims, A=A, b=b,
                                     kktsolver=kkt, options=opts)
        except (ValueError, ArithmeticError) as err:
            sol = {"status": "error", "message": str(err), "x": None}
            continue
        if sol["status"] in ("optimal", "primal infeasible", "dual infeasible"):
            break
    status = sol["status"]
    if status == "optimal":
        x = np.asarray(sol["x"]).ravel()
        return Solution("optimal", x, float(np.dot(sdp.c, x)),
                        {"iterations": int(sol.get("iterations", 0) or 0)})
    if status == "primal infeasible":
        return Solution("infeasible")
    if status == "dual infeasible":
        return Solution("unbounded")
    # 'unknown': accept near-converged iterates
    if sol.get("x") is not None:
        gap = sol.get("relative gap") or sol.get("gap")
        if gap is not None and gap < 1e-5:
            x = np.asarray(sol["x"]).ravel()
            return Solution("optimal", x, float(np.dot(sdp.c, x)),
                            {"iterations": int(sol.get("iterations", 0) or 0),
                             "loose": True})
    # phase-1 fallback: minimize a uniform constraint shift; that problem is
    # strictly feasible, so a strictly positive optimum certifies infeasibility
    if allow_phase1:
        t_star = _phase1_shift(sdp)
        if t_star is not None and t_star > 1e-6:
            return Solution("infeasible", stats={"phase1_shift": t_star})
    return Solution("numerical_failure",
                    stats={"message": sol.get("message", "interior point did not converge")})


def _phase1_shift(sdp: SdpProblem):
    """Least uniform slack t making all rows/blocks feasible (None on failure)."""
    nv = sdp.n_vars()
    c = np.zeros(nv + 1)
    c[nv] = 1.0
    A_ub = None
    b_ub = None
    if sdp.A_ub is not None and len(sdp.A_ub):
        A_ub = np.hstack([sdp.A_ub, -np.ones((len(sdp.A_ub), 1))])
        b_ub = np.asarray(sdp.b_ub, dtype=float)
    bounds = (list(sdp.bounds) if sdp.bounds is not None else [(None, None)] * nv)
    bounds = bounds + [(0.0, None)]
    blocks = []
    for blk in sdp.blocks:
        coeffs = dict(blk.coeffs)
        eye = np.eye(blk.dim)
        coeffs[nv] = eye if blk.orientation == ">=" else -eye
        blocks.append(SdpBlock(F0=blk.F0, coeffs=coeffs, orientation=blk.orientation))
    A_eq = None if sdp.A_eq is None else np.hstack([sdp.A_eq,
                                                    np.zeros((len(sdp.A_eq), 1))])
    aux = SdpProblem(c=c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=sdp.b_eq,
                     bounds=bounds, blocks=blocks)
    sol = _solve_sdp_raw(aux)
    if sol.ok:
        return float(sol.x[nv])
    return None


def _solve_sdp_raw(sdp: SdpProblem, duality_gap: float = 1e-7) -> Solution:
    """SDP solve without the phase-1 fallback (used by the fallback itself)."""
    return _solve_sdp_impl(sdp, duality_gap, allow_phase1=False)


# ---------------------------------------------------------------------------
# Mixed-integer layer
# ---------------------------------------------------------------------------

@dataclass
class MixedIntegerWrapper:
    """A base LP or SDP plus binary variable declarations and gap tolerances."""

    problem: LinearProgram | SdpProblem
    binaries: list  # variable indices restricted to {0, 1}
    abs_gap: float = MILP_GAP
    node_budget: int = 20000

    def __post_init__(self):
        self.binaries = sorted(int(b) for b in self.binaries)


def _solve_relaxation(problem) -> Solution:
    if isinstance(problem, LinearProgram):
        return solve_lp(problem)
    return solve_sdp(problem)


def _branch_variable(x, binaries):
    """Most-fractional binary, ties broken by lowest index."""
    best = None
    best_frac = INT_TOL
    for idx in binaries:
        frac = abs(x[idx] - round(x[idx]))
        if frac > best_frac + 1e-15:
            best = idx
            best_frac = frac
    return best


def _candidate_feasible(problem, x, tol=1e-7) -> bool:
    if problem.A_ub is not None and len(problem.A_ub):
        resid = problem.A_ub @ x - problem.b_ub
        if np.max(resid) > tol * (1.0 + np.max(np.abs(problem.b_ub))):
            return False
    if problem.A_eq is not None and len(problem.A_eq):
        resid = np.abs(problem.A_eq @ x - problem.b_eq)
        if np.max(resid) > tol * (1.0 + np.max(np.abs(problem.b_eq))):
            return False
    if problem.bounds is not None:
        for i, (lo, hi) in enumerate(problem.bounds):
            if lo is not None and x[i] < lo - tol:
                return False
            if hi is not None and x[i] > hi + tol:
                return False
    for blk in getattr(problem, "blocks", []):
        M = blk.F0.copy()
        for i, F in blk.coeffs.items():
            M += x[i] * F
        scale = max(1.0, float(np.max(np.abs(M))))
        eigs = np.linalg.eigvalsh(M)
        if blk.orientation == ">=" and eigs.min() < -tol * scale:
            return False
        if blk.orientation == "<=" and eigs.max() > tol * scale:
            return False
    return True


def _round_binaries(problem, x, binaries):
    """Round each binary toward the side its rows violate least."""
    cand = np.asarray(x, dtype=float).copy()
    if problem.A_ub is None or not len(problem.A_ub):
        for b in binaries:
            cand[b] = round(cand[b])
        return cand
    A = problem.A_ub
    rhs = problem.b_ub
    for b in binaries:
        rows = np.nonzero(A[:, b])[0]
        best_val, best_viol = 0.0, np.inf
        for val in (0.0, 1.0):
            trial = cand.copy()
            trial[b] = val
            viol = float(np.max(A[rows] @ trial - rhs[rows])) if rows.size else 0.0
            if viol < best_viol - 1e-15:
                best_viol, best_val = viol, val
        cand[b] = best_val
    return cand


def _round_repair(problem, x, binaries):
    """Cheap integral repair of a relaxed point; None if it fails."""
    cand = _round_binaries(problem, x, binaries)
    return cand if _candidate_feasible(problem, cand) else None


def solve_mixed_integer(mi: MixedIntegerWrapper) -> Solution:
    """Deterministic best-first branch and bound over the binary variables.

    Each node first attempts an integral round-and-repair of its relaxation;
    when that succeeds the node closes at its own bound, which keeps trees
    shallow for programs whose splits are objective-neutral.
    """
    base = mi.problem.with_bounds({b: (0.0, 1.0) for b in mi.binaries})
    t0 = time.perf_counter()
    root = _solve_relaxation(base)
    nodes = 1
    if root.status == "infeasible":
        return Solution("infeasible", stats={"nodes": nodes})
    if root.status in ("unbounded", "numerical_failure"):
        return Solution(root.status, stats={"nodes": nodes, **root.stats})

    incumbent = None
    incumbent_obj = np.inf
    skipped_lbs = []
    counter = 0
    heap = [(root.objective, counter, base, root)]
    while heap:
        bound, _, problem, rel = heapq.heappop(heap)
        if bound >= incumbent_obj - mi.abs_gap:
            continue
        branch = _branch_variable(rel.x, mi.binaries)
        if branch is None:
            if rel.objective < incumbent_obj - 1e-15:
                incumbent = rel
                incumbent_obj = rel.objective
            continue
        repaired = _round_repair(base, rel.x, mi.binaries)
        closed = False
        if repaired is not None:
            obj = float(np.dot(np.asarray(base.c, dtype=float), repaired))
            if obj < incumbent_obj - 1e-15:
                incumbent = Solution("optimal", repaired, obj)
                incumbent_obj = obj
            closed = obj <= bound + mi.abs_gap
        if not closed and nodes < mi.node_budget:
            # dive: re-solve once with every binary pinned at its rounded value
            rounded = _round_binaries(base, rel.x, mi.binaries)
            child = problem.with_bounds({b: (rounded[b], rounded[b])
                                         for b in mi.binaries})
            dive = _solve_relaxation(child)
            nodes += 1
            if dive.ok:
                if dive.objective < incumbent_obj - 1e-15:
                    incumbent = dive
                    incumbent_obj = dive.objective
                closed = dive.objective <= bound + mi.abs_gap
        if closed:
            continue  # node closed at its own bound
        for fixed in (0.0, 1.0):
            child = problem.with_bounds({branch: (fixed, fixed)})
            if nodes >= mi.node_budget:
                status = "gap_limit" if incumbent is not None else "numerical_failure"
                return Solution(status, None if incumbent is None else incumbent.x,
                                None if incumbent is None else incumbent_obj,
                                {"nodes": nodes, "budget_exhausted": True})
            sol = _solve_relaxation(child)
            nodes += 1
            if sol.status == "infeasible":
                continue
            if sol.status in ("unbounded", "numerical_failure"):
                # cannot certify this subtree; remember its parent bound
                skipped_lbs.append(bound)
                continue
            if sol.objective >= incumbent_obj - mi.abs_gap:
                continue
            counter += 1
            heapq.heappush(heap, (sol.objective, counter, child, sol))
    stats = {"nodes": nodes, "wall_time": time.perf_counter() - t0}
    if incumbent is None:
        if skipped_lbs:
            return Solution("numerical_failure",
                            stats={**stats, "skipped_subtrees": len(skipped_lbs)})
        return Solution("infeasible", stats=stats)
    if skipped_lbs and min(skipped_lbs) < incumbent_obj - mi.abs_gap:
        stats["skipped_subtrees"] = len(skipped_lbs)
        return Solution("gap_limit", incumbent.x, incumbent_obj, stats)
    return Solution("optimal", incumbent.x, incumbent_obj, stats)


def solve_milp(mi: MixedIntegerWrapper) -> Solution:
    if not isinstance(mi.problem, LinearProgram):
        raise SolverError("solve_milp expects a LinearProgram base")
    return solve_mixed_integer(mi)


def solve_misdp(mi: MixedIntegerWrapper) -> Solution:
    if not isinstance(mi.problem, SdpProblem):
        raise SolverError("solve_misdp expects an SdpProblem base")
    if mi.abs_gap < MISDP_GAP:
        mi = MixedIntegerWrapper(mi.problem, mi.binaries, MISDP_GAP, mi.node_budget)
    return solve_mixed_integer(mi)
