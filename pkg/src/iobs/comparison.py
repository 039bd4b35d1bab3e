"""Positive/Metzler comparison system for the framer error, and certificates.

The framer error e = x_hi - x_lo obeys e+ <= Ax e + B [dw; dv; du] with
Ax nonnegative (DT) or Metzler (CT) and B nonnegative. Stability of this
linear comparison system certifies ISS of the observer; its L1 / H-infinity
gain is the quantity the synthesis programs minimize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import ObserverRealization
from .matops import metzlerize


class ComparisonError(ValueError):
    pass


CERT_SLACK = 1e-9


@dataclass
class ComparisonSystem:
    Ax: np.ndarray
    B: np.ndarray          # [A_w  A_v  A_u]
    widths: tuple          # (n_w, n_v, m)
    mode: str              # 'dt' | 'ct'
    gamma: float | None = None
    p: np.ndarray | None = None  # L1 certificate vector or H-inf Q diagonal

    def __post_init__(self):
        offdiag = self.Ax - np.diag(np.diag(self.Ax))
        if np.any(offdiag < -1e-12):
            raise ComparisonError("comparison Ax has negative off-diagonal entries")
        if self.mode == "dt" and np.any(np.diag(self.Ax) < -1e-12):
            raise ComparisonError("DT comparison Ax must be nonnegative")
        if self.B.size and np.any(self.B < -1e-12):
            raise ComparisonError("comparison B must be nonnegative")


def build_comparison(obs: ObserverRealization) -> ComparisonSystem:
    """Compose the comparison matrices from an observer realization."""
    ref = obs.ref
    plant = ref.plant
    sigma = ref.sigma
    absT, absL, absN = np.abs(obs.T), np.abs(obs.L), np.abs(obs.N)
    absMx = np.abs(obs.M_x)
    _, _, mxm = metzlerize(obs.M_x)
    mx_star = absMx if sigma == 1 else mxm
    Ax = mx_star + absT @ ref.F_phi + absL @ ref.F_psi + absN @ ref.F_rho_x
    Aw = np.abs(obs.M_w) + absN @ ref.F_rho_w
    Au = absN @ ref.F_rho_u
    absLV = np.abs(obs.L @ plant.V)
    absNV = np.abs(obs.N @ plant.V)
    if sigma == 1:
        Av = absLV + absNV
    else:
        Av = absLV + (absMx - mxm) @ absNV
    B = np.hstack([Aw, Av, Au])
    return ComparisonSystem(Ax=Ax, B=B, widths=(plant.n_w, plant.n_v, plant.m),
                            mode=plant.time)


def stacked_widths(plant) -> np.ndarray:
    """delta = [w_hi - w_lo; v_hi - v_lo; u_hi - u_lo]; known inputs have zero width."""
    du = np.zeros(plant.m)  # u is a known signal, so its interval is degenerate
    return np.concatenate([plant.w_box.width(), plant.v_box.width(), du])


def stability_margin(cs: ComparisonSystem) -> float:
    """DT: 1 - spectral radius; CT: -spectral abscissa. Positive iff stable."""
    eigs = np.linalg.eigvals(cs.Ax)
    if cs.mode == "dt":
        return 1.0 - float(np.max(np.abs(eigs))) if eigs.size else 1.0
    return -float(np.max(eigs.real)) if eigs.size else np.inf


@dataclass
class CertificateReport:
    ok: bool
    stability_slack: float
    gain_slack: float
    detail: str = ""


def verify_l1_certificate(cs: ComparisonSystem, p, gamma: float,
                          slack: float = CERT_SLACK) -> CertificateReport:
    """Check p'Ax + 1' < p' (DT) or < 0 (CT), and p'B < gamma 1', strictly."""
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p <= 0) or gamma <= 0:
        raise ComparisonError("certificate requires p > 0 and gamma > 0")
    lhs = cs.Ax.T @ p + 1.0
    rhs = p if cs.mode == "dt" else np.zeros_like(p)
    s_stab = float(np.min(rhs - lhs))
    s_gain = float(np.min(gamma - cs.B.T @ p)) if cs.B.size else np.inf
    ok = s_stab > slack and s_gain > slack
    return CertificateReport(ok=ok, stability_slack=s_stab, gain_slack=s_gain,
                             detail=f"p'Ax+1 vs {'p' if cs.mode == 'dt' else '0'} "
                                    f"slack {s_stab:.3g}; p'B vs gamma slack {s_gain:.3g}")


def hinf_block_parts(Ax: np.ndarray, B: np.ndarray, mode: str):
    """Affine decomposition of the H-infinity certificate block.

    Returns (F0, Fq, Fg) with block(q, gamma) = F0 + sum_i q_i Fq[i] + gamma Fg.
    DT (block > 0): [[Q, QAx, QB, 0], [., Q, 0, I], [., ., gI, 0], [., ., ., gI]].
    CT (block < 0): [[QAx + Ax'Q, QB, I], [., -gI, 0], [., ., -gI]].
    """
    n = Ax.shape[0]
    nt = B.shape[1]
    if mode == "dt":
        dim = 3 * n + nt
        F0 = np.zeros((dim, dim))
        F0[n:2 * n, 2 * n + nt:] = np.eye(n)
        F0[2 * n + nt:, n:2 * n] = np.eye(n)
        Fq = []
        for i in range(n):
            F = np.zeros((dim, dim))
            F[i, i] = 1.0
            F[n + i, n + i] = 1.0
            F[i, n:2 * n] += Ax[i, :]
            F[n:2 * n, i] += Ax[i, :]
            F[i, 2 * n:2 * n + nt] += B[i, :]
            F[2 * n:2 * n + nt, i] += B[i, :]
            Fq.append(F)
        Fg = np.zeros((dim, dim))
        for k in range(2 * n, dim):
            Fg[k, k] = 1.0
    else:
        dim = 2 * n + nt
        F0 = np.zeros((dim, dim))
        F0[:n, n + nt:] = np.eye(n)
        F0[n + nt:, :n] = np.eye(n)
        Fq = []
        for i in range(n):
            F = np.zeros((dim, dim))
            F[i, :n] += Ax[i, :]
            F[:n, i] += Ax[i, :]
            F[i, n:n + nt] += B[i, :]
            F[n:n + nt, i] += B[i, :]
            Fq.append(F)
        Fg = np.zeros((dim, dim))
        for k in range(n, dim):
            Fg[k, k] = -1.0
    return F0, Fq, Fg


def hinf_block(cs: ComparisonSystem, q, gamma: float) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    F0, Fq, Fg = hinf_block_parts(cs.Ax, cs.B, cs.mode)
    M = F0 + gamma * Fg
    for i, Fi in enumerate(Fq):
        M = M + q[i] * Fi
    return M


def verify_hinf_certificate(cs: ComparisonSystem, q, gamma: float,
                            slack: float = CERT_SLACK) -> CertificateReport:
    """Assemble the certificate block for diagonal Q and test definiteness."""
    q = np.asarray(q, dtype=float).ravel()
    if np.any(q <= 0) or gamma <= 0:
        raise ComparisonError("certificate requires Q diagonal > 0 and gamma > 0")
    M = hinf_block(cs, q, gamma)
    eigs = np.linalg.eigvalsh(M)
    if cs.mode == "dt":
        margin = float(eigs.min())
        ok = margin > slack
        detail = f"DT block min eigenvalue {margin:.3g}"
    else:
        margin = float(-eigs.max())
        ok = margin > slack
        detail = f"CT block max eigenvalue {-margin:.3g}"
    return CertificateReport(ok=ok, stability_slack=margin, gain_slack=margin,
                             detail=detail)


@dataclass
class DominanceReport:
    ok: bool
    max_excess: float
    first_violation: tuple | None
    bound: np.ndarray


def dominance_check(error: np.ndarray, times: np.ndarray, cs: ComparisonSystem,
                    deltas, tol: float = 0.0) -> DominanceReport:
    """Simulate ebar+ = Ax ebar + B delta from ebar_0 = e_0 and verify
    e_t <= ebar_t elementwise on the shared grid."""
    e = np.asarray(error, dtype=float)
    d = np.asarray(deltas, dtype=float).ravel()
    if d.size != cs.B.shape[1]:
        raise ComparisonError(f"widths size {d.size} vs B columns {cs.B.shape[1]}")
    if e.shape[0] != times.size:
        raise ComparisonError("error history and time grid are misaligned")
    drive = cs.B @ d if cs.B.size else np.zeros(cs.Ax.shape[0])
    ebar = e[0].copy()
    bound = [ebar.copy()]
    if cs.mode == "dt":
        for _ in range(times.size - 1):
            ebar = cs.Ax @ ebar + (drive if ebar.ndim == 1 else drive[:, None])
            bound.append(ebar.copy())
    else:
        for k in range(times.size - 1):
            h = times[k + 1] - times[k]
            dr = drive if ebar.ndim == 1 else drive[:, None]
            k1 = cs.Ax @ ebar + dr
            k2 = cs.Ax @ (ebar + 0.5 * h * k1) + dr
            k3 = cs.Ax @ (ebar + 0.5 * h * k2) + dr
            k4 = cs.Ax @ (ebar + h * k3) + dr
            ebar = ebar + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            bound.append(ebar.copy())
    bound = np.array(bound)
    excess = e - bound
    max_excess = float(excess.max()) if excess.size else 0.0
    # equality cases (error exactly riding the bound) differ between the two
    # floating-point paths by a few ulps; measure excess above that resolution
    ulp = 8.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(bound))
    effective = excess - ulp
    first = None
    ok = True
    if effective.size and float(effective.max()) > tol:
        ok = False
        idx = np.argwhere(effective > tol)[0]
        first = tuple(int(v) for v in idx)
    return DominanceReport(ok=ok, max_excess=max_excess,
                           first_violation=first, bound=bound)
