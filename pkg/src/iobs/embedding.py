"""Interval observer realization, embedding simulation, and containment checks.

The observer propagates auxiliary framers (xi_lo, xi_hi) whose affine image
brackets the state. Stepping applies the mixed-monotone embedding update:
linear terms split by sign (Metzler-style in CT), nonlinear terms through
tight decomposition functions of the sign-stable remainders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decomp
from .matops import signed_split
from .model import ReformulatedPlant, observer_matrices


class EmbeddingError(ValueError):
    pass


class FramerOrderError(EmbeddingError):
    pass


class IntegrationError(EmbeddingError):
    pass


_ORDER_TOL = 1e-9
_DIVERGE_LIMIT = 1e12


@dataclass
class ObserverRealization:
    """All coefficient splits needed to run the embedding observer."""

    ref: ReformulatedPlant
    T: np.ndarray
    L: np.ndarray
    N: np.ndarray
    M_x: np.ndarray
    M_w: np.ndarray
    M_v: np.ndarray
    M_u: np.ndarray
    Mx_up: np.ndarray
    Mx_down: np.ndarray
    Mw_p: np.ndarray; Mw_n: np.ndarray
    Mv_p: np.ndarray; Mv_n: np.ndarray
    T_p: np.ndarray; T_n: np.ndarray
    L_p: np.ndarray; L_n: np.ndarray
    N_p: np.ndarray; N_n: np.ndarray
    NV_p: np.ndarray; NV_n: np.ndarray
    MxN_L: np.ndarray

    @property
    def ct(self) -> bool:
        return self.ref.plant.time == "ct"


def build_observer(ref: ReformulatedPlant, T, L, N) -> ObserverRealization:
    """Validate gains (T + N C = I) and precompute every signed split."""
    M_x, M_w, M_v, M_u = observer_matrices(ref, T, L, N)
    T = np.asarray(T, dtype=float); L = np.asarray(L, dtype=float)
    N = np.asarray(N, dtype=float)
    ld = decomp.linear_dec(M_x, None, ref.plant.time)
    Mw_p, Mw_n, _ = signed_split(M_w)
    Mv_p, Mv_n, _ = signed_split(M_v)
    T_p, T_n, _ = signed_split(T)
    L_p, L_n, _ = signed_split(L)
    N_p, N_n, _ = signed_split(N)
    NV_p, NV_n, _ = signed_split(N @ ref.plant.V)
    return ObserverRealization(ref=ref, T=T, L=L, N=N, M_x=M_x, M_w=M_w,
                               M_v=M_v, M_u=M_u, Mx_up=ld.Aup, Mx_down=ld.Adown,
                               Mw_p=Mw_p, Mw_n=Mw_n, Mv_p=Mv_p, Mv_n=Mv_n,
                               T_p=T_p, T_n=T_n, L_p=L_p, L_n=L_n,
                               N_p=N_p, N_n=N_n, NV_p=NV_p, NV_n=NV_n,
                               MxN_L=M_x @ N + L)


def initial_xi(obs: ObserverRealization, x0_lo, x0_hi, y0, u0):
    """Initial auxiliary framers from the state box and first measurement."""
    plant = obs.ref.plant
    v_lo, v_hi = plant.v_box.lo, plant.v_box.hi
    x0_lo = np.asarray(x0_lo, dtype=float); x0_hi = np.asarray(x0_hi, dtype=float)
    base = -obs.N @ np.asarray(y0, dtype=float) + (obs.N @ plant.D) @ np.asarray(u0, dtype=float)
    vl = (obs.NV_p @ v_lo - obs.NV_n @ v_hi)
    vh = (obs.NV_p @ v_hi - obs.NV_n @ v_lo)
    if x0_lo.ndim > 1:
        vl = vl[:, None]; vh = vh[:, None]
    return x0_lo + base + vl, x0_hi + base + vh


def x_framers(obs: ObserverRealization, xi_lo, xi_hi, y, u):
    """State framers from auxiliary framers and the current measurement."""
    plant = obs.ref.plant
    v_lo, v_hi = plant.v_box.lo, plant.v_box.hi
    shift = obs.N @ np.asarray(y, dtype=float) - (obs.N @ plant.D) @ np.asarray(u, dtype=float)
    lo_v = obs.NV_n @ v_lo - obs.NV_p @ v_hi
    hi_v = obs.NV_n @ v_hi - obs.NV_p @ v_lo
    if np.asarray(xi_lo).ndim > 1:
        lo_v = lo_v[:, None]; hi_v = hi_v[:, None]
    return xi_lo + lo_v + shift, xi_hi + hi_v + shift


def _stack(x, w, u, n_batch):
    parts = [np.asarray(x, dtype=float)]
    w = np.asarray(w, dtype=float); u = np.asarray(u, dtype=float)
    if n_batch is not None:
        if w.ndim == 1:
            w = np.repeat(w[:, None], n_batch, axis=1)
        if u.ndim == 1 and u.size:
            u = np.repeat(u[:, None], n_batch, axis=1)
    parts.append(w)
    if u.size:
        parts.append(u)
    return np.concatenate(parts, axis=0)


def embedding_rhs(obs: ObserverRealization, xi_lo, xi_hi, y, u):
    """The two update lines of the embedding system (successor or derivative)."""
    plant = obs.ref.plant
    ct = obs.ct
    x_lo, x_hi = x_framers(obs, xi_lo, xi_hi, y, u)
    if np.any(x_lo > x_hi + _ORDER_TOL + 1e-6 * np.abs(x_hi)):
        raise FramerOrderError("framer order lost: x_lo > x_hi")
    batch = None if np.asarray(xi_lo).ndim == 1 else np.asarray(xi_lo).shape[1]
    w_lo, w_hi = plant.w_box.lo, plant.w_box.hi
    v_lo, v_hi = plant.v_box.lo, plant.v_box.hi
    u = np.asarray(u, dtype=float)

    phi, psi, rho = obs.ref.phi, obs.ref.psi, obs.ref.rho
    phi_lh = decomp.tight_dec_vec(phi, x_lo, x_hi, ct)
    phi_hl = decomp.tight_dec_vec(phi, x_hi, x_lo, ct)
    if psi.is_zero():
        psi_lh = psi_hl = np.zeros((plant.l,) if batch is None else (plant.l, batch))
        rho_lh = rho_hl = psi_lh
    else:
        psi_lh = decomp.tight_dec_vec(psi, x_lo, x_hi, ct)
        psi_hl = decomp.tight_dec_vec(psi, x_hi, x_lo, ct)
        if rho.is_zero():
            rho_lh = rho_hl = np.zeros_like(psi_lh)
        else:
            z_lo = _stack(x_lo, w_lo, u, batch)
            z_hi = _stack(x_hi, w_hi, u, batch)
            rho_lh = decomp.tight_dec_vec(rho, z_lo, z_hi, ct)
            rho_hl = decomp.tight_dec_vec(rho, z_hi, z_lo, ct)

    known = obs.M_u @ u + obs.MxN_L @ np.asarray(y, dtype=float)
    wv_lo = obs.Mw_p @ w_lo - obs.Mw_n @ w_hi + obs.Mv_n @ v_lo - obs.Mv_p @ v_hi
    wv_hi = obs.Mw_p @ w_hi - obs.Mw_n @ w_lo + obs.Mv_n @ v_hi - obs.Mv_p @ v_lo
    if batch is not None:
        wv_lo = wv_lo[:, None]; wv_hi = wv_hi[:, None]

    lo = (obs.Mx_up @ xi_lo - obs.Mx_down @ xi_hi + wv_lo + known
          + obs.T_p @ phi_lh - obs.T_n @ phi_hl
          + obs.L_n @ psi_lh - obs.L_p @ psi_hl
          + obs.N_n @ rho_lh - obs.N_p @ rho_hl)
    hi = (obs.Mx_up @ xi_hi - obs.Mx_down @ xi_lo + wv_hi + known
          + obs.T_p @ phi_hl - obs.T_n @ phi_lh
          + obs.L_n @ psi_hl - obs.L_p @ psi_lh
          + obs.N_n @ rho_hl - obs.N_p @ rho_lh)
    return lo, hi


def step_dt(obs: ObserverRealization, xi_lo, xi_hi, y, u):
    """One discrete-time update of the auxiliary framers."""
    if obs.ct:
        raise EmbeddingError("step_dt requires a DT realization")
    return embedding_rhs(obs, xi_lo, xi_hi, y, u)


@dataclass
class FramerTrajectory:
    times: np.ndarray
    xi_lo: np.ndarray  # (steps+1, n) or (steps+1, n, trials)
    xi_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    error: np.ndarray  # x_hi - x_lo, always full resolution

    def __post_init__(self):
        if np.any(self.error < -_ORDER_TOL):
            raise FramerOrderError("negative framer error recorded")


@dataclass
class TruthTrajectory:
    times: np.ndarray
    x: np.ndarray  # (steps+1, n) or (steps+1, n, trials)
    y: np.ndarray
    u: np.ndarray


@dataclass
class ContainmentReport:
    min_margin: float
    violations: list  # (time index, coordinate, margin)
    max_error: float
    checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def integrate_ct(obs: ObserverRealization, horizon: float, dt: float,
                 y_provider, u_provider, xi0) -> FramerTrajectory:
    """Fixed-step RK4 integration of the embedding ODE against known signals."""
    if not obs.ct:
        raise EmbeddingError("integrate_ct requires a CT realization")
    if dt <= 0:
        raise EmbeddingError("dt must be positive")
    steps = int(round(horizon / dt))
    xi_lo, xi_hi = (np.asarray(v, dtype=float).copy() for v in xi0)
    times = np.linspace(0.0, steps * dt, steps + 1)
    lo_hist = [xi_lo.copy()]; hi_hist = [xi_hi.copy()]
    xlo_hist = []; xhi_hist = []
    xl, xh = x_framers(obs, xi_lo, xi_hi, y_provider(0.0), u_provider(0.0))
    xlo_hist.append(xl); xhi_hist.append(xh)
    for k in range(steps):
        t = k * dt
        def f(a, b, tt):
            return embedding_rhs(obs, a, b, y_provider(tt), u_provider(tt))
        k1l, k1h = f(xi_lo, xi_hi, t)
        k2l, k2h = f(xi_lo + 0.5 * dt * k1l, xi_hi + 0.5 * dt * k1h, t + 0.5 * dt)
        k3l, k3h = f(xi_lo + 0.5 * dt * k2l, xi_hi + 0.5 * dt * k2h, t + 0.5 * dt)
        k4l, k4h = f(xi_lo + dt * k3l, xi_hi + dt * k3h, t + dt)
        xi_lo = xi_lo + dt / 6.0 * (k1l + 2 * k2l + 2 * k3l + k4l)
        xi_hi = xi_hi + dt / 6.0 * (k1h + 2 * k2h + 2 * k3h + k4h)
        if not (np.all(np.isfinite(xi_lo)) and np.all(np.isfinite(xi_hi))) \
                or max(np.max(np.abs(xi_lo)), np.max(np.abs(xi_hi))) > _DIVERGE_LIMIT:
            raise IntegrationError(f"embedding integration diverged at t={t + dt:.6g}")
        lo_hist.append(xi_lo.copy()); hi_hist.append(xi_hi.copy())
        tn = (k + 1) * dt
        xl, xh = x_framers(obs, xi_lo, xi_hi, y_provider(tn), u_provider(tn))
        xlo_hist.append(xl); xhi_hist.append(xh)
    x_lo = np.array(xlo_hist); x_hi = np.array(xhi_hist)
    return FramerTrajectory(times=times, xi_lo=np.array(lo_hist),
                            xi_hi=np.array(hi_hist), x_lo=x_lo, x_hi=x_hi,
                            error=x_hi - x_lo)


# ---------------------------------------------------------------------------
# Truth simulation
# ---------------------------------------------------------------------------

class NoiseSampler:
    """Per-step noise realization inside a box: iid uniform, constant extreme
    vertex, or sinusoid spanning the box."""

    def __init__(self, box, policy: str, rng: np.random.Generator, trials: int | None):
        self.box = box
        self.policy = policy
        self.trials = trials
        shape = (box.n,) if trials is None else (box.n, trials)
        if policy == "extreme":
            pick = rng.random(shape) < 0.5
            lo = box.lo if trials is None else box.lo[:, None]
            hi = box.hi if trials is None else box.hi[:, None]
            self._const = np.where(pick, hi, lo)
        elif policy == "sin":
            self._phase = rng.uniform(0.0, 2 * np.pi, shape)
            self._freq = rng.uniform(0.5, 2.0, shape)
        elif policy != "iid":
            raise EmbeddingError(f"unknown noise policy {policy!r}")
        self.rng = rng

    def sample(self, t: float):
        if self.box.n == 0:
            return np.zeros((0,) if self.trials is None else (0, self.trials))
        if self.policy == "iid":
            if self.trials is None:
                return self.rng.uniform(self.box.lo, self.box.hi)
            return self.rng.uniform(self.box.lo[:, None], self.box.hi[:, None],
                                    size=(self.box.n, self.trials))
        if self.policy == "extreme":
            return self._const
        c = self.box.center(); r = 0.5 * self.box.width()
        c = c if self.trials is None else c[:, None]
        r = r if self.trials is None else r[:, None]
        return c + r * np.sin(self._freq * t + self._phase)


def _compile_field(exprs):
    fns = [None] * len(exprs)
    from . import exprcore as ex
    fns = [ex.compile_expr(e) for e in exprs]
    def field(z):
        z = np.asarray(z, dtype=float)
        out = [np.broadcast_to(np.asarray(fn(z), dtype=float), z.shape[1:]) for fn in fns]
        return np.array(out) if z.ndim == 1 else np.stack(out)
    return field


def simulate_plant(plant, x0, horizon, dt: float | None = None,
                   noise_policy: str = "iid", seed: int = 0,
                   trials: int | None = None) -> TruthTrajectory:
    """Simulate the uncertain plant. DT: exact iteration over `horizon` steps.
    CT: fixed-step RK4 over time `horizon` with step `dt`, noise held constant
    within each step. Emits y_t = h(x_t) + D u_t + V v_t."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).copy()
    if trials is not None and x.ndim == 1:
        x = np.repeat(x[:, None], trials, axis=1)
    box = plant.x0_box
    lo = box.lo if x.ndim == 1 else box.lo[:, None]
    hi = box.hi if x.ndim == 1 else box.hi[:, None]
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise EmbeddingError("x0 outside the configured initial box")
    f = _compile_field(plant.f)
    h = _compile_field(plant.h)
    u_fn = plant.input_fn()
    batch = None if x.ndim == 1 else x.shape[1]
    w_s = NoiseSampler(plant.w_box, noise_policy, rng, batch)
    v_s = NoiseSampler(plant.v_box, noise_policy, rng, batch)

    def output(xc, v):
        y0 = h(xc) + plant.V @ v
        u = u_fn(y0)  # requires D = 0 when u depends on y (validated at build)
        return y0 + plant.D @ u, u

    if plant.time == "dt":
        steps = int(horizon)
        times = np.arange(steps + 1, dtype=float) * (plant.dt_step or 1.0)
    else:
        if dt is None or dt <= 0:
            raise EmbeddingError("CT simulation requires dt > 0")
        steps = int(round(horizon / dt))
        times = np.linspace(0.0, steps * dt, steps + 1)

    v = v_s.sample(0.0)
    xs = [x.copy()]; ys = []; us = []
    for k in range(steps):
        t = times[k]
        y, u = output(x, v)
        ys.append(y); us.append(u)
        w = w_s.sample(t)
        if plant.time == "dt":
            x = f(x) + plant.B @ u + plant.W @ w
        else:
            def rhs(xc):
                yk, uk = output(xc, v)
                return f(xc) + plant.B @ uk + plant.W @ w
            k1 = rhs(x); k2 = rhs(x + 0.5 * dt * k1)
            k3 = rhs(x + 0.5 * dt * k2); k4 = rhs(x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _DIVERGE_LIMIT:
            raise IntegrationError(f"plant trajectory diverged at step {k + 1}")
        xs.append(x.copy())
        v = v_s.sample(times[k + 1])
    y, u = output(x, v)
    ys.append(y); us.append(u)
    return TruthTrajectory(times=times, x=np.array(xs), y=np.array(ys), u=np.array(us))


def run_closed_loop(obs: ObserverRealization, horizon, dt: float | None = None,
                    noise_policy: str = "iid", seed: int = 0,
                    trials: int | None = None, x0=None):
    """Co-simulate truth and observer; returns (truth, framers, report).

    Truth states are sampled uniformly from the initial box (unless x0 given).
    In CT mode truth and embedding integrate in one RK4 loop so the observer
    sees stage-consistent measurements.
    """
    plant = obs.ref.plant
    rng = np.random.default_rng(seed)
    if x0 is None:
        x0 = plant.x0_box.sample(rng, trials)
    x = np.asarray(x0, dtype=float).copy()
    batch = None if x.ndim == 1 else x.shape[1]

    f = _compile_field(plant.f)
    h = _compile_field(plant.h)
    u_fn = plant.input_fn()
    w_s = NoiseSampler(plant.w_box, noise_policy, rng, batch)
    v_s = NoiseSampler(plant.v_box, noise_policy, rng, batch)

    def output(xc, v):
        y0 = h(xc) + plant.V @ v
        u = u_fn(y0)  # D = 0 enforced when u depends on y
        return y0 + plant.D @ u, u

    if plant.time == "dt":
        n_steps = int(horizon)
        times = np.arange(n_steps + 1, dtype=float) * (plant.dt_step or 1.0)
    else:
        if dt is None or dt <= 0:
            raise EmbeddingError("CT co-simulation requires dt > 0")
        n_steps = int(round(horizon / dt))
        times = np.linspace(0.0, n_steps * dt, n_steps + 1)

    v = v_s.sample(0.0)
    y, u = output(x, v)
    lo0, hi0 = plant.x0_box.lo, plant.x0_box.hi
    if batch is not None:
        lo0 = np.repeat(lo0[:, None], batch, axis=1)
        hi0 = np.repeat(hi0[:, None], batch, axis=1)
    xi_lo, xi_hi = initial_xi(obs, lo0, hi0, y, u)

    xs = [x.copy()]; ys = [y]; us = [u]
    xi_lo_h = [xi_lo.copy()]; xi_hi_h = [xi_hi.copy()]
    x_lo_h = []; x_hi_h = []; err_h = []

    xl, xh = x_framers(obs, xi_lo, xi_hi, y, u)
    x_lo_h.append(xl); x_hi_h.append(xh); err_h.append(xh - xl)

    for k in range(n_steps):
        w = w_s.sample(times[k])
        if plant.time == "dt":
            x = f(x) + plant.B @ u + plant.W @ w
            xi_lo, xi_hi = step_dt(obs, xi_lo, xi_hi, y, u)
        else:
            def stage(xc, a, b):
                yc, uc = output(xc, v)
                dx = f(xc) + plant.B @ uc + plant.W @ w
                dlo, dhi = embedding_rhs(obs, a, b, yc, uc)
                return dx, dlo, dhi
            k1 = stage(x, xi_lo, xi_hi)
            k2 = stage(x + 0.5 * dt * k1[0], xi_lo + 0.5 * dt * k1[1], xi_hi + 0.5 * dt * k1[2])
            k3 = stage(x + 0.5 * dt * k2[0], xi_lo + 0.5 * dt * k2[1], xi_hi + 0.5 * dt * k2[2])
            k4 = stage(x + dt * k3[0], xi_lo + dt * k3[1], xi_hi + dt * k3[2])
            x = x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            xi_lo = xi_lo + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            xi_hi = xi_hi + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi_lo)) and np.all(np.isfinite(xi_hi))) \
                or max(np.max(np.abs(x)), np.max(np.abs(xi_hi))) > _DIVERGE_LIMIT:
            raise IntegrationError(f"closed-loop simulation diverged at step {k + 1}")
        v = v_s.sample(times[k + 1])
        y, u = output(x, v)
        xl, xh = x_framers(obs, xi_lo, xi_hi, y, u)
        xs.append(x.copy()); ys.append(y); us.append(u)
        xi_lo_h.append(xi_lo.copy()); xi_hi_h.append(xi_hi.copy())
        x_lo_h.append(xl); x_hi_h.append(xh); err_h.append(xh - xl)

    truth = TruthTrajectory(times=times, x=np.array(xs), y=np.array(ys), u=np.array(us))
    framers = FramerTrajectory(times=times, xi_lo=np.array(xi_lo_h),
                               xi_hi=np.array(xi_hi_h), x_lo=np.array(x_lo_h),
                               x_hi=np.array(x_hi_h), error=np.array(err_h))
    report = check_containment(truth, framers, tol=0.0)
    return truth, framers, report


def check_containment(truth: TruthTrajectory, framers: FramerTrajectory,
                      tol: float) -> ContainmentReport:
    """Per-time, per-coordinate margins min(x - x_lo, x_hi - x); entries below
    -tol are reported as violations."""
    if truth.times.shape != framers.times.shape or np.max(np.abs(truth.times - framers.times)) > 1e-12:
        raise EmbeddingError("time grids of truth and framers differ")
    margin = np.minimum(truth.x - framers.x_lo, framers.x_hi - truth.x)
    violations = []
    bad = np.argwhere(margin < -tol)
    for idx in bad:
        violations.append((int(idx[0]), int(idx[1]), float(margin[tuple(idx)])))
    return ContainmentReport(min_margin=float(margin.min()) if margin.size else 0.0,
                             violations=violations,
                             max_error=float(framers.error.max()) if framers.error.size else 0.0,
                             checked=int(margin.size))
