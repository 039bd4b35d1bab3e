import numpy as np
import pytest

from iobs import embedding as emb
from iobs.examples import get_example
from iobs.matops import IntervalVector
from iobs.model import build_plant, reformulate
from iobs.synthesis import design


def _henon(profile="simulation", norm="l1"):
    exm = get_example("dt-henon")
    ref = exm.reformulation(profile)
    gs = exm.gain_set(norm)
    return exm, ref, emb.build_observer(ref, gs.T, gs.L, gs.N)


# ---------------------------------------------------------------------------
# build_observer
# ---------------------------------------------------------------------------

def test_build_henon_runnable():
    _, ref, obs = _henon("reference")
    assert obs.Mx_down.shape == (2, 2)
    assert np.all(obs.Mx_down == 0)  # nonnegative M_x has empty down part


def test_build_n_zero_collapses_shift():
    _, ref, obs = _henon()
    y = np.array([0.4])
    u = np.zeros(0)
    xi_lo, xi_hi = np.array([-1.0, 0.0]), np.array([1.0, 0.5])
    x_lo, x_hi = emb.x_framers(obs, xi_lo, xi_hi, y, u)
    # N = 0: state framers equal auxiliary framers
    assert np.allclose(x_lo, xi_lo) and np.allclose(x_hi, xi_hi)


def test_build_ctex1_runnable():
    exm = get_example("ct-ex1")
    ref = exm.reformulation("reference")
    gs = exm.gain_set("l1")
    obs = emb.build_observer(ref, gs.T, gs.L, gs.N)
    assert obs.ct
    off = obs.Mx_up - np.diag(np.diag(obs.Mx_up))
    assert np.all(off >= 0)  # CT up-part is Metzler


def test_initial_xi_matches_definition():
    exm = get_example("dt-predprey")
    ref = exm.reformulation("reference")
    gs = exm.gain_set("l1")
    obs = emb.build_observer(ref, gs.T, gs.L, gs.N)
    plant = ref.plant
    y0 = np.array([0.1, 0.2, 0.05])
    u0 = np.zeros(0)
    lo, hi = emb.initial_xi(obs, plant.x0_box.lo, plant.x0_box.hi, y0, u0)
    NV = gs.N @ plant.V
    NVp = np.maximum(NV, 0); NVn = NVp - NV
    expect_lo = plant.x0_box.lo - gs.N @ y0 + NVp @ plant.v_box.lo - NVn @ plant.v_box.hi
    assert np.allclose(lo, expect_lo)


# ---------------------------------------------------------------------------
# step_dt
# ---------------------------------------------------------------------------

def test_step_degenerate_stays_degenerate():
    # zero noise widths + degenerate initial interval + exact output
    exm = get_example("dt-henon")
    cfg = dict(exm.configs["simulation"])
    cfg["w_box"] = [[0.0, 0.0]] * 2
    cfg["v_box"] = [[0.0, 0.0]]
    plant = build_plant(cfg)
    ref = reformulate(plant, policy="upper")
    gs = exm.gain_set("l1")
    obs = emb.build_observer(ref, gs.T, gs.L, gs.N)
    x = np.array([0.7, 0.2])
    xi_lo, xi_hi = emb.initial_xi(obs, x, x, np.array([x[0]]), np.zeros(0))
    for _ in range(10):
        y = np.array([x[0]])
        xi_lo, xi_hi = emb.step_dt(obs, xi_lo, xi_hi, y, np.zeros(0))
        x = np.array([x[1] + 0.05 * (1 - x[0] ** 2), 0.3 * x[0]])
        assert np.allclose(xi_lo, xi_hi, atol=1e-12)
        assert np.allclose(xi_lo, x, atol=1e-10)


def test_step_one_step_containment_monte_carlo(rng):
    # one step from the full initial box contains the true successor
    exm, ref, obs = _henon("simulation")
    plant = ref.plant
    for _ in range(100):
        x0 = plant.x0_box.sample(rng)
        v = plant.v_box.sample(rng)
        w = plant.w_box.sample(rng)
        y = np.array([x0[0]]) + plant.V @ v
        xi_lo, xi_hi = emb.initial_xi(obs, plant.x0_box.lo, plant.x0_box.hi, y, np.zeros(0))
        xi_lo, xi_hi = emb.step_dt(obs, xi_lo, xi_hi, y, np.zeros(0))
        x1 = np.array([x0[1] + 0.05 * (1 - x0[0] ** 2), 0.3 * x0[0]]) + w
        y1 = np.array([x1[0]]) + plant.V @ plant.v_box.sample(rng)
        x_lo, x_hi = emb.x_framers(obs, xi_lo, xi_hi, y1, np.zeros(0))
        assert np.all(x1 >= x_lo - 1e-10) and np.all(x1 <= x_hi + 1e-10)


def test_step_monotone_in_input_interval(rng):
    # widening the framer pair never shrinks the output pair
    _, ref, obs = _henon("simulation")
    for _ in range(50):
        c = ref.plant.x0_box.sample(rng) * 0.4
        w1 = np.abs(rng.normal(size=2)) * 0.1
        w2 = w1 + np.abs(rng.normal(size=2)) * 0.1
        y = np.array([c[0]])
        lo1, hi1 = emb.step_dt(obs, c - w1, c + w1, y, np.zeros(0))
        lo2, hi2 = emb.step_dt(obs, c - w2, c + w2, y, np.zeros(0))
        assert np.all(lo2 <= lo1 + 1e-12) and np.all(hi2 >= hi1 - 1e-12)


def test_step_requires_dt_mode():
    exm = get_example("ct-ex1")
    ref = exm.reformulation("reference")
    gs = exm.gain_set("l1")
    obs = emb.build_observer(ref, gs.T, gs.L, gs.N)
    with pytest.raises(emb.EmbeddingError):
        emb.step_dt(obs, np.zeros(3), np.zeros(3), np.zeros(1), np.zeros(2))


# ---------------------------------------------------------------------------
# integrate_ct
# ---------------------------------------------------------------------------

def test_integrate_zero_field_constant():
    cfg = {
        "n": 1, "l": 1, "m": 0, "n_w": 1, "n_v": 1, "time": "ct",
        "f": ["0"], "h": ["x1"], "W": [[0.0]], "V": [[0.0]],
        "w_box": [[0, 0]], "v_box": [[0, 0]], "x0_box": [[-1, 1]],
        "domain_box": [[-2, 2]],
    }
    ref = reformulate(build_plant(cfg), policy="upper")
    obs = emb.build_observer(ref, np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))
    traj = emb.integrate_ct(obs, 1.0, 1e-2, lambda t: np.zeros(1),
                            lambda t: np.zeros(0), (np.array([-1.0]), np.array([1.0])))
    assert np.allclose(traj.x_lo, -1.0) and np.allclose(traj.x_hi, 1.0)


def test_integrate_step_halving_ctex2():
    exm = get_example("ct-ex2")
    ref = exm.reformulation("simulation")
    res = design(ref, "l1", exm.synthesis)
    obs = emb.build_observer(ref, res.T, res.L, res.N)
    y = lambda t: np.zeros(1)
    u = lambda t: np.zeros(0)
    xi0 = (ref.plant.x0_box.lo.copy(), ref.plant.x0_box.hi.copy())
    a = emb.integrate_ct(obs, 2.0, 1e-3, y, u, xi0)
    b = emb.integrate_ct(obs, 2.0, 5e-4, y, u, xi0)
    diff = np.abs(a.x_lo[-1] - b.x_lo[-1]).max()
    assert diff < 1e-6


def test_integrate_ctex1_bounded_steady_state():
    exm = get_example("ct-ex1")
    ref = exm.reformulation("reference")
    gs = exm.gain_set("l1")
    obs = emb.build_observer(ref, gs.T, gs.L, gs.N)
    truth, framers, report = emb.run_closed_loop(obs, 10.0, dt=1e-3, seed=3)
    err = framers.error
    # converges to a bounded steady state
    assert err[-1].max() < err[0].max()
    assert err[-2000:].max() < 1.05 * err[-4000:-2000].max()
    assert report.ok


def test_integrate_divergence_diagnostic():
    cfg = {
        "n": 1, "l": 1, "m": 0, "n_w": 1, "n_v": 1, "time": "ct",
        "f": ["2*x1"], "h": ["x1"], "W": [[1.0]], "V": [[0.0]],
        "w_box": [[-0.1, 0.1]], "v_box": [[0, 0]], "x0_box": [[1, 2]],
        "domain_box": [[-1e9, 1e9]],
    }
    ref = reformulate(build_plant(cfg), policy="upper")
    obs = emb.build_observer(ref, np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(emb.IntegrationError, match="diverged"):
        emb.integrate_ct(obs, 60.0, 1e-2, lambda t: np.zeros(1),
                         lambda t: np.zeros(0), (np.array([1.0]), np.array([2.0])))


# ---------------------------------------------------------------------------
# simulate_plant
# ---------------------------------------------------------------------------

def test_simulate_henon_hand_arithmetic():
    exm = get_example("dt-henon")
    cfg = dict(exm.configs["simulation"])
    cfg["w_box"] = [[0.0, 0.0]] * 2
    cfg["v_box"] = [[0.0, 0.0]]
    plant = build_plant(cfg)
    traj = emb.simulate_plant(plant, np.array([1.0, 0.0]), horizon=1)
    assert np.allclose(traj.x[1], [0.0, 0.3], atol=1e-14)


def test_simulate_predprey_sampling_time_metadata():
    plant = get_example("dt-predprey").plant("simulation")
    assert plant.dt_step == pytest.approx(0.05)
    traj = emb.simulate_plant(plant, plant.x0_box.center(), horizon=4)
    assert np.allclose(np.diff(traj.times), 0.05)


def test_simulate_noise_policies_stay_in_box(rng):
    plant = get_example("dt-henon").plant("simulation")
    x0 = plant.x0_box.center()
    for policy in ("iid", "extreme", "sin"):
        traj = emb.simulate_plant(plant, x0, horizon=20, noise_policy=policy, seed=11)
        assert np.all(np.isfinite(traj.x))
    # extreme policy: outputs differ from the noiseless run by the vertex noise
    sampler = emb.NoiseSampler(plant.w_box, "extreme", np.random.default_rng(0), None)
    w = sampler.sample(0.0)
    assert all(w[i] in (plant.w_box.lo[i], plant.w_box.hi[i]) for i in range(2))
    s2 = emb.NoiseSampler(plant.w_box, "sin", np.random.default_rng(0), None)
    vals = np.array([s2.sample(t) for t in np.linspace(0, 10, 100)])
    assert np.all(vals >= plant.w_box.lo - 1e-12) and np.all(vals <= plant.w_box.hi + 1e-12)


def test_simulate_rejects_x0_outside_box():
    plant = get_example("dt-henon").plant("simulation")
    with pytest.raises(emb.EmbeddingError):
        emb.simulate_plant(plant, np.array([5.0, 0.0]), horizon=1)


# ---------------------------------------------------------------------------
# check_containment
# ---------------------------------------------------------------------------

def test_containment_infinite_tolerance_never_fails(rng):
    _, ref, obs = _henon("simulation")
    truth, framers, _ = emb.run_closed_loop(obs, 10, trials=5, seed=1)
    rep = emb.check_containment(truth, framers, tol=np.inf)
    assert rep.ok


def test_containment_henon_reference_gains_mc():
    _, ref, obs = _henon("simulation")
    truth, framers, _ = emb.run_closed_loop(obs, 50, trials=100, seed=7)
    rep = emb.check_containment(truth, framers, tol=1e-9)
    assert rep.ok and rep.checked == 51 * 2 * 100


def test_containment_ctex1_reference_gains():
    exm = get_example("ct-ex1")
    ref = exm.reformulation("reference")
    gs = exm.gain_set("l1")
    obs = emb.build_observer(ref, gs.T, gs.L, gs.N)
    truth, framers, _ = emb.run_closed_loop(obs, 2.0, dt=1e-3, trials=10, seed=9)
    rep = emb.check_containment(truth, framers, tol=1e-6)
    assert rep.ok


def test_containment_grid_mismatch():
    _, ref, obs = _henon("simulation")
    truth, framers, _ = emb.run_closed_loop(obs, 5, seed=1)
    framers2 = emb.FramerTrajectory(times=framers.times[:-1], xi_lo=framers.xi_lo,
                                    xi_hi=framers.xi_hi, x_lo=framers.x_lo,
                                    x_hi=framers.x_hi, error=framers.error)
    with pytest.raises(emb.EmbeddingError):
        emb.check_containment(truth, framers2, tol=0.0)


def test_framer_order_asserted_during_stepping():
    _, ref, obs = _henon("simulation")
    with pytest.raises(emb.FramerOrderError):
        emb.step_dt(obs, np.array([1.0, 1.0]), np.array([-1.0, -1.0]),
                    np.array([0.0]), np.zeros(0))
