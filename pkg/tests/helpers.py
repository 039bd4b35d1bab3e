"""Independent oracles used across the test suite.

These deliberately avoid the code paths they check: vertex enumeration for
LPs, explicit sign-pattern enumeration for the mixed-integer programs, dense
grids for decomposition-function bounds, and central finite differences for
derivatives.
"""

import itertools

import numpy as np

from iobs import optim


def vertex_enumeration_lp(lp: optim.LinearProgram):
    """Brute-force LP optimum by enumerating basic feasible points.

    Collects all rows (inequalities + active bounds), solves every n-subset,
    keeps feasible points, and returns the best objective (None if none).
    """
    c = np.asarray(lp.c, dtype=float)
    n = c.size
    rows = []
    rhs = []
    if lp.A_ub is not None:
        for r, b in zip(lp.A_ub, lp.b_ub):
            rows.append(np.asarray(r, dtype=float)); rhs.append(float(b))
    if lp.A_eq is not None:
        for r, b in zip(lp.A_eq, lp.b_eq):
            rows.append(np.asarray(r, dtype=float)); rhs.append(float(b))
            rows.append(-np.asarray(r, dtype=float)); rhs.append(-float(b))
    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * n
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None:
            e = np.zeros(n); e[i] = -1.0
            rows.append(e); rhs.append(-lo)
        if hi is not None:
            e = np.zeros(n); e[i] = 1.0
            rows.append(e); rhs.append(hi)
    A = np.array(rows)
    b = np.array(rhs)
    m = len(rows)
    best = None
    for combo in itertools.combinations(range(m), n):
        M = A[list(combo)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, b[list(combo)])
        if np.all(A @ x <= b + 1e-8):
            val = float(c @ x)
            if best is None or val < best - 1e-12:
                best = val
    return best


def enumerate_sign_patterns(prog, solver=None):
    """Minimum objective over all 2^k binary patterns of a synthesis program."""
    base = prog.base
    solve = solver or (optim.solve_lp if prog.kind == "milp" else optim.solve_sdp)
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(prog.binaries)):
        fixed = base.with_bounds({b: (v, v) for b, v in zip(prog.binaries, bits)})
        sol = solve(fixed)
        if sol.ok and (best is None or sol.objective < best):
            best = sol.objective
    return best


def central_difference(f, x, i, h=1e-5):
    xp = np.array(x, dtype=float); xm = np.array(x, dtype=float)
    xp[i] += h; xm[i] -= h
    return (f(xp) - f(xm)) / (2 * h)


def grid_points(box, per_axis):
    """Full grid over an interval box (n, per_axis**n)."""
    axes = [np.linspace(box.lo[i], box.hi[i], per_axis) for i in range(box.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.vstack([m.ravel() for m in mesh])


def random_subbox(box, rng, min_rel=0.1):
    """A random axis-aligned sub-box of the given box."""
    lo = np.empty(box.n); hi = np.empty(box.n)
    for i in range(box.n):
        w = box.hi[i] - box.lo[i]
        width = rng.uniform(min_rel * w, w) if w > 0 else 0.0
        start = rng.uniform(box.lo[i], box.hi[i] - width) if w > 0 else box.lo[i]
        lo[i] = start; hi[i] = start + width
    from iobs.matops import IntervalVector
    return IntervalVector(lo, hi)
