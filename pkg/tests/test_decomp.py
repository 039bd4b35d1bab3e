import math

import numpy as np
import pytest

from helpers import grid_points, random_subbox
from iobs import decomp, exprcore as ex
from iobs.matops import IntervalVector

XY = {"x1": 0, "x2": 1}
XYZ = {"x1": 0, "x2": 1, "x3": 2}


def _henon_phi(domain=(0.0, 1.1)):
    g = [ex.parse("0.05*(1 - x1^2)", XY), ex.parse("0", XY)]
    box = IntervalVector([domain[0], -1.2], [domain[1], 1.2])
    bounds = ex.jacobian_bounds(g, box, n_cols=2)
    return g, bounds, box


def _ctex1_nonlinearity(x1_lo=-50.0, x1_hi=50.0):
    params = {"a1": 35.63, "b1": 15.0}
    g = [ex.parse("0", XYZ), ex.parse("0", XYZ),
         ex.parse("(a1/b1)*cos(x1)*x2", XYZ, params)]
    box = IntervalVector([x1_lo, -12.5, -10], [x1_hi, 12.5, 10])
    bounds = ex.jacobian_bounds(g, box)
    return g, bounds, box


# ---------------------------------------------------------------------------
# jss_split
# ---------------------------------------------------------------------------

def test_split_accepts_reference_linear_shift():
    # the bundled CT benchmark's shift matrix, accepted on a domain where the
    # 3-decimal rounding keeps every remainder entry sign-stable
    g, bounds, _ = _ctex1_nonlinearity(x1_lo=0.025, x1_hi=2 * math.pi - 0.025)
    H = np.array([[0, 0, 0], [0, 0, 0], [29.692, 2.375, 0]])
    split = decomp.jss_split(g, bounds, H_override=H)
    assert np.all(split.bounds.hi[2] <= decomp.JSS_TOL)


def test_split_rejects_bad_override_naming_entry():
    g, bounds, _ = _henon_phi(domain=(-2.0, 2.0))
    with pytest.raises(decomp.DecompositionError, match=r"\(0,0\)"):
        decomp.jss_split(g, bounds, H_override=np.zeros((2, 2)))


def test_split_policy_lower_forces_nonnegative_remainder():
    g, bounds, _ = _henon_phi(domain=(-2.0, 2.0))
    split = decomp.jss_split(g, bounds, policy="lower")
    assert np.allclose(split.H[0, 0], -0.2)
    assert np.all(split.bounds.lo >= -decomp.JSS_TOL)


def test_split_sign_unstable_linear_claimed_bounds():
    # g(z) = z with claimed bounds [-1, 1]: policy 'lower' gives H = -1,
    # remainder bounds [0, 2]
    g = [ex.parse("x1", {"x1": 0})]
    bounds = ex.JacobianBounds(np.array([[-1.0]]), np.array([[1.0]]))
    split = decomp.jss_split(g, bounds, policy="lower")
    assert split.H[0, 0] == -1.0
    assert split.bounds.lo[0, 0] == 0.0 and split.bounds.hi[0, 0] == 2.0


def test_split_policy_sparse_keeps_stable_entries_zero():
    g, bounds, _ = _henon_phi(domain=(0.0, 1.1))
    split = decomp.jss_split(g, bounds, policy="sparse")
    assert np.all(split.H == 0)


def test_split_constant_rows_folded():
    g = [ex.parse("0.3*x1 + 2", XY), ex.parse("x2 - x2", XY)]
    box = IntervalVector([-1, -1], [1, 1])
    split = decomp.jss_split(g, ex.jacobian_bounds(g, box, n_cols=2), policy="lower")
    assert isinstance(split.mu[0], ex.Const) and split.mu[0].value == pytest.approx(2.0)
    assert ex.is_zero(split.mu[1])


# ---------------------------------------------------------------------------
# jss_gain / selector_matrices
# ---------------------------------------------------------------------------

def test_gain_henon():
    g, bounds, _ = _henon_phi()
    split = decomp.jss_split(g, bounds, policy="upper")
    assert np.allclose(split.F, [[0.11, 0], [0, 0]], atol=1e-12)


def test_gain_ctex1():
    g, bounds, _ = _ctex1_nonlinearity()
    split = decomp.jss_split(g, bounds, policy="upper")
    assert split.F[2, 0] == pytest.approx(59.384, abs=1e-3)
    assert split.F[2, 1] == pytest.approx(4.751, abs=1e-3)


def test_gain_monotone_increasing():
    bounds = ex.JacobianBounds(np.array([[0.0, 0.2]]), np.array([[0.5, 1.0]]))
    F = decomp.jss_gain(bounds)
    assert np.allclose(F, [[0.5, 1.0]])


def test_selectors_henon_zero():
    g, bounds, _ = _henon_phi()
    split = decomp.jss_split(g, bounds, policy="upper")
    assert np.all(split.D[0] == 0)


def test_selectors_predprey_rows():
    from iobs.examples import get_example
    ref = get_example("dt-predprey").reformulation("reference")
    D = np.array(ref.phi.D)
    assert np.array_equal(D, [[0, 1, 0], [1, 0, 0], [1, 0, 0]])


def test_selectors_identity_for_increasing():
    bounds = ex.JacobianBounds(np.array([[0.1, 0.2]]), np.array([[0.5, 1.0]]))
    assert np.all(decomp.selector_matrices(bounds)[0] == 1)


# ---------------------------------------------------------------------------
# tight_dec
# ---------------------------------------------------------------------------

def test_tight_dec_identity_on_diagonal(rng):
    g, bounds, box = _henon_phi()
    split = decomp.jss_split(g, bounds, policy="upper")
    for _ in range(20):
        z = box.sample(rng)
        v = decomp.tight_dec(split, 0, z, z)
        assert v == pytest.approx(ex.evaluate(split.mu[0], z), rel=1e-12)


def test_tight_dec_henon_selects_second_argument():
    g, bounds, _ = _henon_phi()
    split = decomp.jss_split(g, bounds, policy="upper")
    z1 = np.array([0.1, 0.5])
    z2 = np.array([1.0, -0.5])
    # selector row is zero, so the value comes from the second argument
    assert decomp.tight_dec(split, 0, z1, z2) == pytest.approx(
        ex.evaluate(split.mu[0], z2))


def test_tight_dec_grid_bounds(rng):
    g, bounds, box = _henon_phi()
    split = decomp.jss_split(g, bounds, policy="upper")
    for _ in range(20):
        sub = random_subbox(box, rng)
        pts = grid_points(sub, 100)
        vals = ex.evaluate(split.mu[0], pts)
        up = decomp.tight_dec(split, 0, sub.hi, sub.lo)
        dn = decomp.tight_dec(split, 0, sub.lo, sub.hi)
        assert up >= vals.max() - 1e-9
        assert dn <= vals.min() + 1e-9


def test_tight_dec_monotonicity_property(rng):
    g, bounds, box = _ctex1_nonlinearity()
    split = decomp.jss_split(g, bounds, policy="upper")
    for _ in range(1000):
        z = box.sample(rng)
        zh = np.minimum(z + np.abs(rng.normal(size=3)), box.hi)
        zp = box.sample(rng)
        up_h = decomp.tight_dec_vec(split, zh, zp)
        up_l = decomp.tight_dec_vec(split, z, zp)
        assert np.all(up_h >= up_l - 1e-9)  # increasing in first argument
        dn_h = decomp.tight_dec_vec(split, zp, zh)
        dn_l = decomp.tight_dec_vec(split, zp, z)
        assert np.all(dn_h <= dn_l + 1e-9)  # decreasing in second argument


def test_tight_dec_ct_mode_pins_self_coordinate(rng):
    # a map whose own-coordinate slope is negative: the CT variant must take
    # the self coordinate from the first argument regardless of the selector
    g = [ex.parse("-2*x1 + x2", XY)]
    box = IntervalVector([-1, -1], [1, 1])
    split = decomp.jss_split(g, ex.jacobian_bounds(g, box, n_cols=2),
                             H_override=np.zeros((1, 2)))
    z1 = np.array([0.5, 0.2])
    z2 = np.array([-0.5, -0.2])
    v = decomp.tight_dec(split, 0, z1, z2, ct_mode=True)
    assert v == pytest.approx(-2 * z1[0] + z1[1])
    v_dt = decomp.tight_dec(split, 0, z1, z2, ct_mode=False)
    assert v_dt == pytest.approx(-2 * z2[0] + z1[1])


def test_spread_bound_fmu(rng):
    # mu_d(zbar, zlo) - mu_d(zlo, zbar) <= F (zbar - zlo) on random boxes
    g, bounds, box = _ctex1_nonlinearity()
    split = decomp.jss_split(g, bounds, policy="upper")
    for _ in range(1000):
        sub = random_subbox(box, rng)
        spread = (decomp.tight_dec_vec(split, sub.hi, sub.lo)
                  - decomp.tight_dec_vec(split, sub.lo, sub.hi))
        assert np.all(spread <= split.F @ sub.width() + 1e-9)


# ---------------------------------------------------------------------------
# linear_dec
# ---------------------------------------------------------------------------

def test_linear_dec_dt_nonnegative_case():
    ld = decomp.linear_dec([[0, 1], [0.2, 0]], None, "dt")
    assert np.allclose(ld.Aup, [[0, 1], [0.2, 0]])
    assert np.all(ld.Adown == 0)


def test_linear_dec_ct_metzler_split():
    ld = decomp.linear_dec([[-1, -2], [3, -4]], None, "ct")
    assert np.allclose(ld.Aup, [[-1, 0], [3, -4]])
    assert np.allclose(ld.Adown, [[0, 2], [0, 0]])


def test_linear_dec_nonnegative_b():
    ld = decomp.linear_dec(np.eye(2), [[1.0], [2.0]], "dt")
    assert np.all(ld.Bneg == 0)


def test_linear_dec_reconstruction(rng):
    for mode in ("dt", "ct"):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 2))
        ld = decomp.linear_dec(A, B, mode)
        assert np.allclose(ld.Aup - ld.Adown, A, atol=1e-12)
        assert np.allclose(ld.Bpos - ld.Bneg, B, atol=1e-12)
        assert np.all(ld.Adown >= 0) and np.all(ld.Bpos >= 0) and np.all(ld.Bneg >= 0)
        if mode == "ct":
            # Metzler: nonnegative off-diagonals
            off = ld.Aup - np.diag(np.diag(ld.Aup))
            assert np.all(off >= 0)
        else:
            assert np.all(ld.Aup >= 0)
