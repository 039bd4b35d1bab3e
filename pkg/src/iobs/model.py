"""Plant description, output-map reformulation, and observer coefficient matrices.

The plant is

    x+ = f(x) + B u + W w,    y = h(x) + D u + V v,

with x+ the successor state (DT) or derivative (CT). Reformulation splits
f = A x + phi(x) and h = C x + psi(x) into linear parts plus sign-stable
remainders, and decomposes the propagated output nonlinearity
psi+ = A2 x + W2 w + B2 u + rho(x, w, u).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decomp, exprcore as ex
from .matops import IntervalVector, as_matrix


class ModelError(ValueError):
    pass


class GainConsistencyError(ModelError):
    pass


def _box_from_config(entry, size: int, name: str) -> IntervalVector:
    if entry is None:
        if size:
            raise ModelError(f"missing interval box {name!r}")
        return IntervalVector(np.zeros(0), np.zeros(0))
    iv = IntervalVector.from_pairs(entry)
    if iv.n != size:
        raise ModelError(f"box {name!r} has {iv.n} entries, expected {size}")
    return iv


@dataclass
class PlantModel:
    """Validated uncertain plant (immutable by convention after construction)."""

    n: int
    l: int
    m: int
    n_w: int
    n_v: int
    time: str  # 'dt' | 'ct'
    f: list  # n expressions over x-slots 0..n-1
    h: list  # l expressions over x-slots 0..n-1
    B: np.ndarray
    W: np.ndarray
    V: np.ndarray
    D: np.ndarray
    w_box: IntervalVector
    v_box: IntervalVector
    u_box: IntervalVector
    x0_box: IntervalVector
    domain_box: IntervalVector
    params: dict = field(default_factory=dict)
    input_exprs: list | None = None  # optional u = g(y), over y-slots 0..l-1
    dt_step: float | None = None  # sampling period metadata for DT plants

    @property
    def var_names(self) -> list[str]:
        return ([f"x{i+1}" for i in range(self.n)]
                + [f"w{i+1}" for i in range(self.n_w)]
                + [f"u{i+1}" for i in range(self.m)])

    def full_box(self) -> IntervalVector:
        """domain x wBox x uBox, the bounding region for (x, w, u)."""
        return self.domain_box.concat(self.w_box).concat(self.u_box)

    def input_fn(self):
        """Closure u(y) for the known-input signal (zero if not configured)."""
        if not self.m:
            return lambda y: np.zeros((0,) + np.shape(y)[1:])
        if self.input_exprs is None:
            return lambda y: np.zeros((self.m,) + np.shape(y)[1:])
        fns = [ex.compile_expr(e) for e in self.input_exprs]
        def u_of_y(y):
            y = np.asarray(y, dtype=float)
            out = [np.broadcast_to(np.asarray(fn(y), dtype=float), y.shape[1:]) for fn in fns]
            return np.array(out) if y.ndim == 1 else np.stack(out)
        return u_of_y


def build_plant(config: dict) -> PlantModel:
    """Validate a configuration record and construct the plant."""
    try:
        n = int(config["n"]); l = int(config["l"])
        m = int(config.get("m", 0))
        n_w = int(config.get("n_w", 0)); n_v = int(config.get("n_v", 0))
        time = str(config["time"]).lower()
    except KeyError as k:
        raise ModelError(f"missing config field {k}") from None
    if time not in ("dt", "ct"):
        raise ModelError(f"time must be 'dt' or 'ct', got {time!r}")
    if min(n, l) < 1 or min(m, n_w, n_v) < 0:
        raise ModelError("dimensions must be positive (n, l) / nonnegative (m, n_w, n_v)")

    params = dict(config.get("params", {}))
    xvars = {f"x{i+1}": i for i in range(n)}
    f_texts = list(config["f"]); h_texts = list(config["h"])
    if len(f_texts) != n:
        raise ModelError(f"f has {len(f_texts)} rows, expected n={n}")
    if len(h_texts) != l:
        raise ModelError(f"h has {len(h_texts)} rows, expected l={l}")
    f = [ex.parse(t, xvars, params) for t in f_texts]
    h = [ex.parse(t, xvars, params) for t in h_texts]

    def mat(key, rows, cols):
        raw = config.get(key)
        if raw is None:
            return np.zeros((rows, cols))
        M = as_matrix(raw, key)
        if M.shape != (rows, cols):
            raise ModelError(f"{key} has shape {M.shape}, expected {(rows, cols)}")
        return M

    B = mat("B", n, m)
    W = mat("W", n, n_w)
    V = mat("V", l, n_v)
    Dm = mat("D", l, m)

    w_box = _box_from_config(config.get("w_box"), n_w, "w_box")
    v_box = _box_from_config(config.get("v_box"), n_v, "v_box")
    u_box = _box_from_config(config.get("u_box"), m, "u_box")
    x0_box = _box_from_config(config.get("x0_box"), n, "x0_box")
    domain_box = _box_from_config(config.get("domain_box"), n, "domain_box")
    for i in range(n):
        if x0_box.lo[i] < domain_box.lo[i] or x0_box.hi[i] > domain_box.hi[i]:
            raise ModelError(f"x0_box exceeds domain_box in coordinate {i+1}")

    input_exprs = None
    sig = config.get("input_signal")
    if sig and sig.get("type") == "exprs_of_y":
        if np.any(Dm != 0.0):
            raise ModelError("input_signal from y requires D = 0 (no feedthrough)")
        yvars = {f"y{i+1}": i for i in range(l)}
        texts = list(sig["exprs"])
        if len(texts) != m:
            raise ModelError(f"input_signal needs {m} expressions")
        input_exprs = [ex.parse(t, yvars, params) for t in texts]

    return PlantModel(n=n, l=l, m=m, n_w=n_w, n_v=n_v, time=time, f=f, h=h,
                      B=B, W=W, V=V, D=Dm, w_box=w_box, v_box=v_box,
                      u_box=u_box, x0_box=x0_box, domain_box=domain_box,
                      params=params, input_exprs=input_exprs,
                      dt_step=config.get("dt_step"))


@dataclass
class ReformulatedPlant:
    """Plant with linear/JSS decompositions fixed over the configured domain."""

    plant: PlantModel
    A: np.ndarray
    C: np.ndarray
    phi: decomp.JssSplit   # over x-slots (n x n)
    psi: decomp.JssSplit   # over x-slots (l x n)
    A2: np.ndarray
    W2: np.ndarray
    B2: np.ndarray
    rho: decomp.JssSplit   # over stacked (x, w, u) slots (l rows)
    sigma: int             # 1 if DT else 0
    beta: int              # 1 if V != 0 else 0

    @property
    def F_phi(self) -> np.ndarray:
        return self.phi.F

    @property
    def F_psi(self) -> np.ndarray:
        return self.psi.F

    @property
    def F_rho_x(self) -> np.ndarray:
        return self.rho.F[:, :self.plant.n]

    @property
    def F_rho_w(self) -> np.ndarray:
        n = self.plant.n
        return self.rho.F[:, n:n + self.plant.n_w]

    @property
    def F_rho_u(self) -> np.ndarray:
        n, n_w = self.plant.n, self.plant.n_w
        return self.rho.F[:, n + n_w:]


def _jac_override(entry, shape, name):
    if entry is None:
        return None
    lo = as_matrix(entry["lo"], f"{name}.lo")
    hi = as_matrix(entry["hi"], f"{name}.hi")
    if lo.shape != shape or hi.shape != shape:
        raise ModelError(f"{name} override has shape {lo.shape}, expected {shape}")
    return ex.JacobianBounds(lo, hi)


def reformulate(plant: PlantModel, overrides: dict | None = None,
                policy: str = "lower") -> ReformulatedPlant:
    """Split f, h and the propagated output nonlinearity into linear + JSS parts.

    `overrides` may pin H_f (the linear part of f), C, A2/W2/B2, or supply
    analytic Jacobian bounds (jac_f, jac_h, jac_psi_plus) tighter than the
    natural interval extension.
    """
    ov = overrides or {}
    n, l, m, n_w = plant.n, plant.l, plant.m, plant.n_w
    xbox = plant.domain_box

    bounds_f = _jac_override(ov.get("jac_f"), (n, n), "jac_f") \
        or ex.jacobian_bounds(plant.f, xbox)
    H_f = ov.get("H_f")
    try:
        phi = decomp.jss_split(plant.f, bounds_f, policy=policy,
                               H_override=None if H_f is None else as_matrix(H_f, "H_f"))
    except decomp.DecompositionError as err:
        raise ModelError(f"state map reformulation failed: {err}") from err

    bounds_h = _jac_override(ov.get("jac_h"), (l, n), "jac_h") \
        or ex.jacobian_bounds(plant.h, xbox)
    C_ov = ov.get("C")
    try:
        psi = decomp.jss_split(plant.h, bounds_h, policy=policy,
                               H_override=None if C_ov is None else as_matrix(C_ov, "C"))
    except decomp.DecompositionError as err:
        raise ModelError(f"output map reformulation failed: {err}") from err

    n_full = n + n_w + m
    psi_linear = np.all(psi.bounds.lo == 0.0) and np.all(psi.bounds.hi == 0.0)
    if psi_linear:
        A2 = np.zeros((l, n)); W2 = np.zeros((l, n_w)); B2 = np.zeros((l, m))
        rho = decomp.zero_split(l, n_full)
    else:
        # successor-state substitutions x_j -> f_j(x) + (W w)_j + (B u)_j
        subs = {}
        for j in range(n):
            e = plant.f[j]
            for k in range(n_w):
                if plant.W[j, k] != 0.0:
                    e = ex.add(e, ex.mul(ex.Const(plant.W[j, k]), ex.Var(n + k, f"w{k+1}")))
            for k in range(m):
                if plant.B[j, k] != 0.0:
                    e = ex.add(e, ex.mul(ex.Const(plant.B[j, k]), ex.Var(n + n_w + k, f"u{k+1}")))
            subs[j] = e
        psi_plus = []
        for i in range(l):
            base = psi.mu[i]
            if plant.time == "dt":
                psi_plus.append(ex.substitute(base, subs))
            else:
                acc = ex.ZERO
                for j in range(n):
                    dij = ex.differentiate(base, j)
                    if not ex.is_zero(dij):
                        acc = ex.add(acc, ex.mul(dij, subs[j]))
                psi_plus.append(acc)

        full_box = plant.full_box()
        bounds_pp = _jac_override(ov.get("jac_psi_plus"), (l, n_full), "jac_psi_plus") \
            or ex.jacobian_bounds(psi_plus, full_box, n_cols=n_full)
        H_pp = None
        if any(k in ov for k in ("A2", "W2", "B2")):
            A2o = as_matrix(ov["A2"], "A2") if ov.get("A2") is not None else np.zeros((l, n))
            W2o = as_matrix(ov["W2"], "W2") if ov.get("W2") is not None else np.zeros((l, n_w))
            B2o = as_matrix(ov["B2"], "B2") if ov.get("B2") is not None else np.zeros((l, m))
            H_pp = np.hstack([A2o, W2o, B2o])
        try:
            rho = decomp.jss_split(psi_plus, bounds_pp, policy=policy, H_override=H_pp)
        except decomp.DecompositionError as err:
            raise ModelError(f"propagated output nonlinearity is not sign-stable: {err}") from err
        A2 = rho.H[:, :n]
        W2 = rho.H[:, n:n + n_w]
        B2 = rho.H[:, n + n_w:]

    sigma = 1 if plant.time == "dt" else 0
    beta = 1 if (plant.V.size and np.any(plant.V != 0.0)) else 0
    return ReformulatedPlant(plant=plant, A=phi.H, C=psi.H, phi=phi, psi=psi,
                             A2=A2, W2=W2, B2=B2, rho=rho, sigma=sigma, beta=beta)


def observer_matrices(ref: ReformulatedPlant, T, L, N,
                      tol: float = 1e-8):
    """Coefficient matrices of the equivalent observer dynamics.

    Requires T + N C = I (up to tol). Returns (M_x, M_w, M_v, M_u).
    """
    plant = ref.plant
    T = as_matrix(T, "T"); L = as_matrix(L, "L"); N = as_matrix(N, "N")
    n, l = plant.n, plant.l
    if T.shape != (n, n) or L.shape != (n, l) or N.shape != (n, l):
        raise ModelError("gain dimensions inconsistent with the plant")
    resid = T + N @ ref.C - np.eye(n)
    if np.max(np.abs(resid)) > tol:
        raise GainConsistencyError(
            f"T + N C differs from identity by {np.max(np.abs(resid)):.3g}")
    M_x = T @ ref.A - L @ ref.C - N @ ref.A2
    M_w = T @ plant.W - N @ ref.W2
    M_u = T @ plant.B - N @ ref.B2 - (M_x @ N + L) @ plant.D
    M_v = (M_x @ N + L) @ plant.V
    return M_x, M_w, M_v, M_u
