"""Command-line surface: design, simulate, verify, and end-to-end examples.

Configuration and gain records are JSON; trajectories are CSV with the
column schema ``t, x_1..x_n, xlo_1..xlo_n, xhi_1..xhi_n, e_1..e_n, trial``
printed at 17 significant digits so reruns are byte-identical. Plot emission
writes a standalone script; the toolkit itself renders nothing.

Exit codes: 0 success, 2 infeasible / certificate failure, 3 containment
violation, 4 config or usage error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, comparison, embedding, examples, synthesis
from .model import GainConsistencyError, ModelError, build_plant, observer_matrices, reformulate

log = logging.getLogger("iobs")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONTAINMENT = 3
EXIT_CONFIG = 4
EXIT_NUMERICAL = 5


class ConfigError(ValueError):
    pass


@dataclass
class ResolvedConfig:
    raw: dict
    plant: object
    ref: object
    options: synthesis.SynthesisOptions
    sim: dict
    config_hash: str
    name: str = "config"


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return float(obj)
    return obj


def _hash_config(raw: dict) -> str:
    text = json.dumps(_to_jsonable(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _options_from_dict(d: dict) -> synthesis.SynthesisOptions:
    opts = synthesis.SynthesisOptions()
    if not d:
        return opts
    fields = {k: d[k] for k in ("epsilon", "big_m", "positivity", "q_min", "q_max",
                                "tie_break", "node_budget", "big_m_retries") if k in d}
    opts = synthesis.SynthesisOptions(**fields)
    if "fix_n" in d:
        opts.fix_n = d["fix_n"] if d["fix_n"] in (None, "auto") else np.asarray(d["fix_n"], dtype=float)
    if d.get("l_support") is not None:
        opts.l_support = np.asarray(d["l_support"], dtype=bool)
    if d.get("n_support") is not None:
        opts.n_support = np.asarray(d["n_support"], dtype=bool)
    return opts


def _overrides_from_dict(d: dict):
    if not d:
        return None
    out = {}
    for key in ("H_f", "C", "A2", "W2", "B2"):
        if d.get(key) is not None:
            out[key] = np.asarray(d[key], dtype=float)
    for key in ("jac_f", "jac_h", "jac_psi_plus"):
        if d.get(key) is not None:
            out[key] = {"lo": np.asarray(d[key]["lo"], dtype=float),
                        "hi": np.asarray(d[key]["hi"], dtype=float)}
    return out or None


def load_config(path: str, transform_arg: str | None = None) -> ResolvedConfig:
    """Resolve a config path; 'builtin:NAME[:profile]' loads a bundled example."""
    if path.startswith("builtin:"):
        parts = path.split(":")
        name = parts[1]
        profile = parts[2] if len(parts) > 2 else "simulation"
        try:
            exm = examples.get_example(name)
        except KeyError as err:
            raise ConfigError(str(err)) from err
        plant = exm.plant(profile)
        ref = exm.reformulation(profile)
        raw = {"builtin": name, "profile": profile}
        sim = dict(exm.sim)
        sim.setdefault("seed", 0)
        sim.setdefault("noise_policy", "iid")
        return ResolvedConfig(raw=raw, plant=plant, ref=ref, options=exm.synthesis,
                              sim=sim, config_hash=_hash_config(raw),
                              name=f"{name}/{profile}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path!r}: {err}") from err
    try:
        plant = build_plant(raw["plant"])
    except (KeyError, ModelError, ValueError) as err:
        raise ConfigError(f"invalid plant config: {err}") from err
    S = None
    tr = raw.get("transform") or {}
    if transform_arg and transform_arg != "auto":
        with open(transform_arg) as fh:
            S = np.asarray(json.load(fh)["S"], dtype=float)
    elif tr.get("S") is not None:
        S = np.asarray(tr["S"], dtype=float)
    if transform_arg == "auto" or (S is None and tr.get("auto_poles")):
        poles = tr.get("auto_poles")
        if poles is None:
            raise ConfigError("--transform auto requires transform.auto_poles in the config")
        ref0 = reformulate(plant, _overrides_from_dict(raw.get("overrides")),
                           policy=raw.get("policy", "lower"))
        _, S = synthesis.find_transform(ref0.A, ref0.C, poles, mode=plant.time)
    if S is not None:
        plant = synthesis.coordinate_transform(plant, S)
        overrides = None  # overrides are stated in original coordinates
    else:
        overrides = _overrides_from_dict(raw.get("overrides"))
    try:
        ref = reformulate(plant, overrides, policy=raw.get("policy", "lower"))
    except ModelError as err:
        raise ConfigError(f"reformulation failed: {err}") from err
    sim = dict(raw.get("simulation", {}))
    sim.setdefault("horizon", 50 if plant.time == "dt" else 10.0)
    if plant.time == "ct":
        sim.setdefault("dt", 1e-3)
    sim.setdefault("trials", 1)
    sim.setdefault("seed", 0)
    sim.setdefault("noise_policy", "iid")
    return ResolvedConfig(raw=raw, plant=plant, ref=ref,
                          options=_options_from_dict(raw.get("synthesis", {})),
                          sim=sim, config_hash=_hash_config(raw), name=path)


# ---------------------------------------------------------------------------
# Gain records
# ---------------------------------------------------------------------------

def gains_record(cfg: ResolvedConfig, result: synthesis.SynthesisResult) -> dict:
    cert_type = "l1_vector" if result.norm == "l1" else "hinf_diagonal"
    return _to_jsonable({
        "toolkit_version": __version__,
        "config_hash": cfg.config_hash,
        "seed": cfg.sim.get("seed", 0),
        "norm": result.norm,
        "gamma": result.gamma,
        "certified_gamma": result.certified_gamma,
        "T": result.T, "L": result.L, "N": result.N,
        "M_x": result.M_x, "M_w": result.M_w, "M_v": result.M_v, "M_u": result.M_u,
        "sigma": cfg.ref.sigma, "beta": cfg.ref.beta,
        "certificate": {"type": cert_type, "values": result.certificate},
        "solver_stats": result.solver_stats,
    })


def load_gains(path: str):
    """Gains path: a JSON record or 'builtin:NAME:l1|hinf'."""
    if path.startswith("builtin:"):
        _, name, norm = path.split(":")
        gs = examples.get_example(name).gain_set(norm)
        return {"T": gs.T, "L": gs.L, "N": gs.N, "norm": norm}
    try:
        with open(path) as fh:
            rec = json.load(fh)
        return {"T": np.asarray(rec["T"], dtype=float),
                "L": np.asarray(rec["L"], dtype=float),
                "N": np.asarray(rec["N"], dtype=float),
                "norm": rec.get("norm", "l1"),
                "gamma": rec.get("gamma"),
                "certificate": rec.get("certificate")}
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise ConfigError(f"cannot read gains {path!r}: {err}") from err


# ---------------------------------------------------------------------------
# CSV / plot emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(path: str, truth, framers) -> None:
    n = truth.x.shape[1]
    trials = truth.x.shape[2] if truth.x.ndim == 3 else 1
    cols = (["t"] + [f"x_{i+1}" for i in range(n)]
            + [f"xlo_{i+1}" for i in range(n)] + [f"xhi_{i+1}" for i in range(n)]
            + [f"e_{i+1}" for i in range(n)] + ["trial"])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for trial in range(trials):
            for k, t in enumerate(truth.times):
                if truth.x.ndim == 3:
                    row = ([t] + list(truth.x[k, :, trial])
                           + list(framers.x_lo[k, :, trial])
                           + list(framers.x_hi[k, :, trial])
                           + list(framers.error[k, :, trial]))
                else:
                    row = ([t] + list(truth.x[k]) + list(framers.x_lo[k])
                           + list(framers.x_hi[k]) + list(framers.error[k]))
                fh.write(",".join(_fmt(v) for v in row) + f",{trial}\n")


_PLOT_TEMPLATE = '''"""Generated plot script: state/framers (left) and error curves (right)."""
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv_path!r})))
trial0 = [r for r in rows if r["trial"] == "0"]
t = [float(r["t"]) for r in trial0]
n = {n}
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
for i in range(1, n + 1):
    ax1.plot(t, [float(r[f"x_{{i}}"]) for r in trial0], label=f"x{{i}}")
    ax1.plot(t, [float(r[f"xlo_{{i}}"]) for r in trial0], "--")
    ax1.plot(t, [float(r[f"xhi_{{i}}"]) for r in trial0], "--")
    ax2.plot(t, [float(r[f"e_{{i}}"]) for r in trial0], label=f"e{{i}}")
ax1.set_xlabel("t"); ax1.set_title("state and framers"); ax1.legend()
ax2.set_xlabel("t"); ax2.set_title("framer error"); ax2.legend()
fig.tight_layout()
plt.show()
'''


def write_plot_script(path: str, csv_path: str, n: int) -> None:
    with open(path, "w") as fh:
        fh.write(_PLOT_TEMPLATE.format(csv_path=csv_path, n=n))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_design(cfg: ResolvedConfig, norm: str, out_path: str | None) -> int:
    res = synthesis.design(cfg.ref, norm, cfg.options)
    if res.status == "infeasible":
        print(f"design[{cfg.name}] {norm}: infeasible")
        return EXIT_INFEASIBLE
    if res.status in ("numerical_failure", "gap_limit") and res.T is None:
        print(f"design[{cfg.name}] {norm}: {res.status}")
        return EXIT_NUMERICAL
    obs = embedding.build_observer(cfg.ref, res.T, res.L, res.N)
    cs = comparison.build_comparison(obs)
    if norm == "l1":
        rep = comparison.verify_l1_certificate(cs, res.certificate, res.certified_gamma)
    else:
        rep = comparison.verify_hinf_certificate(cs, res.certificate, res.certified_gamma)
    print(f"design[{cfg.name}] {norm}: gamma = {res.gamma:.6g} "
          f"(certified {res.certified_gamma:.6g}); {rep.detail}")
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(gains_record(cfg, res), fh, indent=1)
        print(f"gains written to {out_path}")
    return EXIT_OK


def cmd_simulate(cfg: ResolvedConfig, gains: dict, out_path: str | None,
                 horizon=None, dt=None, trials=None, seed=None,
                 tol: float | None = None) -> int:
    try:
        obs = embedding.build_observer(cfg.ref, gains["T"], gains["L"], gains["N"])
    except (GainConsistencyError, ModelError) as err:
        print(f"invalid gains: {err}")
        return EXIT_CONFIG
    sim = cfg.sim
    horizon = sim["horizon"] if horizon is None else horizon
    dt = sim.get("dt") if dt is None else dt
    trials = sim.get("trials", 1) if trials is None else trials
    seed = sim.get("seed", 0) if seed is None else seed
    if tol is None:
        tol = 1e-9 if cfg.plant.time == "dt" else 1e-6
    try:
        truth, framers, _ = embedding.run_closed_loop(
            obs, horizon, dt=dt, noise_policy=sim.get("noise_policy", "iid"),
            seed=seed, trials=trials)
    except embedding.EmbeddingError as err:
        print(f"simulation failed: {err}")
        return EXIT_NUMERICAL
    report = embedding.check_containment(truth, framers, tol=tol)
    print(f"simulate[{cfg.name}]: trials={trials} steps={truth.times.size - 1} "
          f"max framer error = {report.max_error:.6g}, min margin = "
          f"{report.min_margin:.3g}, violations beyond {tol:g}: {len(report.violations)}")
    if out_path:
        write_trajectory_csv(out_path, truth, framers)
        write_plot_script(out_path + ".plot.py", out_path, cfg.plant.n)
        print(f"trajectories written to {out_path}")
    return EXIT_CONTAINMENT if report.violations else EXIT_OK


def cmd_verify(cfg: ResolvedConfig, gains: dict, norm: str | None = None) -> int:
    norm = norm or gains.get("norm", "l1")
    try:
        feasible, gamma, cert = synthesis.feasibility_check(
            cfg.ref, gains["T"], gains["L"], gains["N"], norm,
            epsilon=cfg.options.epsilon, q_min=cfg.options.q_min,
            q_max=cfg.options.q_max)
    except (GainConsistencyError, ModelError) as err:
        print(f"invalid gains: {err}")
        return EXIT_CONFIG
    if not feasible:
        print(f"verify[{cfg.name}] {norm}: certificate infeasible")
        return EXIT_INFEASIBLE
    obs = embedding.build_observer(cfg.ref, gains["T"], gains["L"], gains["N"])
    cs = comparison.build_comparison(obs)
    margin = comparison.stability_margin(cs)
    sim = cfg.sim
    horizon = sim["horizon"] if cfg.plant.time == "dt" else min(sim["horizon"], 2.0)
    truth, framers, _ = embedding.run_closed_loop(
        obs, horizon, dt=sim.get("dt"), seed=sim.get("seed", 0),
        trials=min(int(sim.get("trials", 1)), 10))
    dom = comparison.dominance_check(
        framers.error, framers.times, cs, comparison.stacked_widths(cfg.plant),
        tol=0.0 if cfg.plant.time == "dt" else 1e-6)
    cert_type = "L1 vector p" if norm == "l1" else "H-infinity diagonal Q"
    print(f"verify[{cfg.name}] {norm}: certificate {cert_type}, gamma = {gamma:.6g}, "
          f"stability margin = {margin:.4g}, dominance {'holds' if dom.ok else 'FAILS'} "
          f"(max excess {dom.max_excess:.3g})")
    return EXIT_OK if dom.ok else EXIT_INFEASIBLE


def cmd_example(name: str, norm: str, out_dir: str | None) -> int:
    try:
        exm = examples.get_example(name)
    except KeyError as err:
        print(err)
        return EXIT_CONFIG
    cfg = load_config(f"builtin:{name}")
    print(f"== example {name} ({exm.title}), norm {norm} ==")
    res = synthesis.design(cfg.ref, norm, cfg.options)
    if res.status == "infeasible":
        print("design infeasible")
        return EXIT_INFEASIBLE
    if res.T is None:
        print(f"design failed: {res.status}")
        return EXIT_NUMERICAL
    print(f"designed gamma = {res.gamma:.6g}")
    gains = {"T": res.T, "L": res.L, "N": res.N, "norm": norm}
    out_csv = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        rec_path = os.path.join(out_dir, f"{name}-{norm}-gains.json")
        with open(rec_path, "w") as fh:
            json.dump(gains_record(cfg, res), fh, indent=1)
        out_csv = os.path.join(out_dir, f"{name}-{norm}-trajectories.csv")
    code = cmd_simulate(cfg, gains, out_csv)
    if code != EXIT_OK:
        return code
    return cmd_verify(cfg, gains, norm)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="iobs",
        description="Interval observer synthesis for bounded-Jacobian systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="synthesize observer gains")
    p_design.add_argument("--config", required=True)
    p_design.add_argument("--norm", choices=("l1", "hinf"), default="l1")
    p_design.add_argument("--out")
    p_design.add_argument("--transform", help="JSON file with S, or 'auto'")
    p_design.add_argument("--fix-n0", action="store_true",
                          help="pin N = 0 (drops the CT bilinear coupling)")
    p_design.add_argument("--positivity", action="store_true",
                          help="sign-restrict instead of binary absolute values")

    p_sim = sub.add_parser("simulate", help="closed-loop truth + framer run")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--gains", required=True)
    p_sim.add_argument("--out")
    p_sim.add_argument("--horizon", type=float)
    p_sim.add_argument("--dt", type=float)
    p_sim.add_argument("--trials", type=int)
    p_sim.add_argument("--seed", type=int)

    p_ver = sub.add_parser("verify", help="re-certify a gains record")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--gains", required=True)
    p_ver.add_argument("--norm", choices=("l1", "hinf"))

    p_ex = sub.add_parser("example", help="run a built-in benchmark end to end")
    p_ex.add_argument("name")
    p_ex.add_argument("--norm", choices=("l1", "hinf"), default="l1")
    p_ex.add_argument("--out")

    args = parser.parse_args(argv)
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("IOBS_LOG", "quiet"),
                                         logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s: %(message)s")

    try:
        if args.command == "design":
            cfg = load_config(args.config, transform_arg=args.transform)
            if args.fix_n0:
                cfg.options.fix_n = np.zeros((cfg.plant.n, cfg.plant.l))
            if args.positivity:
                cfg.options.positivity = True
            return cmd_design(cfg, args.norm, args.out)
        if args.command == "simulate":
            cfg = load_config(args.config)
            gains = load_gains(args.gains)
            return cmd_simulate(cfg, gains, args.out, horizon=args.horizon,
                                dt=args.dt, trials=args.trials, seed=args.seed)
        if args.command == "verify":
            cfg = load_config(args.config)
            gains = load_gains(args.gains)
            return cmd_verify(cfg, gains, args.norm)
        if args.command == "example":
            return cmd_example(args.name, args.norm, args.out)
    except ConfigError as err:
        print(f"config error: {err}")
        return EXIT_CONFIG
    except synthesis.AssemblyError as err:
        print(f"assembly error: {err}")
        return EXIT_CONFIG
    except (embedding.IntegrationError, synthesis.SynthesisError) as err:
        print(f"numerical failure: {err}")
        return EXIT_NUMERICAL
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
