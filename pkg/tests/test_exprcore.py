import math

import numpy as np
import pytest

from helpers import central_difference
from iobs import exprcore as ex
from iobs.matops import IntervalVector

XV = {"x1": 0, "x2": 1, "x3": 2}
PARAMS = {"a1": 35.63, "b1": 15.0, "a2": 0.25}


def _parse(text, variables=None, params=None):
    return ex.parse(text, variables or XV, params or PARAMS)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def test_parse_flexible_joint_row():
    vars_ = {"x1": 0, "x2": 1, "x3": 2, "w1": 3, "w2": 4}
    e = ex.parse("b1*x3 - a1*sin(x1) - a2*x2 + w2", vars_, PARAMS)
    val = ex.evaluate(e, np.array([0.5, 2.0, 1.0, 0.0, 0.3]))
    expected = 15 * 1.0 - 35.63 * math.sin(0.5) - 0.25 * 2.0 + 0.3
    assert val == pytest.approx(expected, rel=1e-12)


def test_parse_single_variable():
    e = _parse("x1")
    assert isinstance(e, ex.Var) and e.slot == 0


def test_parse_error_position():
    with pytest.raises(ex.ParseError) as err:
        _parse("sin(")
    assert err.value.position == 4


def test_parse_unknown_identifier():
    with pytest.raises(ex.ParseError, match="unknown identifier"):
        _parse("x1 + nope")


def test_parse_bad_exponent():
    with pytest.raises(ex.ParseError, match="exponent"):
        _parse("x1^(2)")
    with pytest.raises(ex.ParseError):
        _parse("x1^x2")


def test_parse_grammar_unary_minus_binds_before_pow():
    # per the grammar, '-x1^2' parses as (-x1)^2
    e = _parse("-x1^2")
    assert ex.evaluate(e, np.array([3.0, 0, 0])) == pytest.approx(9.0)
    # inside a subtraction the usual reading holds
    e2 = _parse("1 - x1^2")
    assert ex.evaluate(e2, np.array([3.0, 0, 0])) == pytest.approx(-8.0)


def test_parse_division_by_literal_zero_rejected():
    with pytest.raises(ex.ParseError):
        _parse("x1 / 0")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_eval_henon_nonlinearity():
    e = _parse("0.05*(1 - x1^2)")
    assert ex.evaluate(e, np.array([2.0, 0, 0])) == pytest.approx(-0.15)


def test_eval_cos_product_with_parameters():
    e = _parse("(a1/b1)*cos(x1)*x2")
    assert ex.evaluate(e, np.array([0.0, 1.0, 0.0])) == pytest.approx(35.63 / 15.0)


def test_eval_constant():
    e = _parse("1")
    assert ex.evaluate(e, np.array([5.0, 5.0, 5.0])) == 1.0


def test_eval_division_by_zero_raises():
    e = _parse("x1 / x2")
    with pytest.raises(ex.EvalError):
        ex.evaluate(e, np.array([1.0, 0.0, 0.0]))


def test_eval_batched_matches_scalar(rng):
    e = _parse("sin(x1)*x2 + exp(x3)^2")
    pts = rng.normal(size=(3, 40))
    batched = ex.evaluate(e, pts)
    for k in range(40):
        assert batched[k] == pytest.approx(ex.evaluate(e, pts[:, k]), rel=1e-14)


def test_compiled_matches_tree_eval(rng):
    e = _parse("0.05*(1 - x1^2) + cos(x2)*x3")
    f = ex.compile_expr(e)
    pts = rng.normal(size=(3, 25))
    assert np.allclose(f(pts), ex.evaluate(e, pts))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def test_diff_polynomial_rule():
    e = _parse("0.05*(1 - x1^2)")
    d = ex.differentiate(e, 0)
    for x in (-2.0, -0.5, 0.3, 1.7):
        assert ex.evaluate(d, np.array([x, 0, 0])) == pytest.approx(-0.1 * x, rel=1e-12)


def test_diff_product_rule():
    e = _parse("cos(x1)*x2")
    d = ex.differentiate(e, 1)
    assert ex.evaluate(d, np.array([0.7, 5.0, 0])) == pytest.approx(math.cos(0.7))


def test_diff_independence():
    e = _parse("sin(x3)")
    assert ex.is_zero(ex.differentiate(e, 0))


def test_diff_matches_finite_differences(rng):
    exprs = ["0.05*(1 - x1^2)", "(a1/b1)*cos(x1)*x2", "exp(x3)*x1 - x2^3",
             "sin(x1)*cos(x2) + x3/(2 + x2^2)"]
    for text in exprs:
        e = _parse(text)
        f = lambda p: ex.evaluate(e, p)
        for slot in range(3):
            d = ex.differentiate(e, slot)
            for _ in range(20):
                p = rng.uniform(-1.5, 1.5, 3)
                num = central_difference(f, p, slot)
                sym = ex.evaluate(d, p)
                assert sym == pytest.approx(num, rel=1e-6, abs=1e-6)


# ---------------------------------------------------------------------------
# printing round-trip
# ---------------------------------------------------------------------------

def _random_expr(rng, depth=0):
    choice = rng.integers(0, 8 if depth < 4 else 2)
    if choice == 0:
        return ex.Const(float(np.round(rng.normal(), 3)))
    if choice == 1:
        slot = int(rng.integers(0, 3))
        return ex.Var(slot, f"x{slot+1}")
    if choice in (2, 3, 4, 5):
        op = ("add", "sub", "mul", "div")[choice - 2]
        return ex.Bin(op, _random_expr(rng, depth + 1), _random_expr(rng, depth + 1))
    if choice == 6:
        op = ("neg", "sin", "cos", "exp")[int(rng.integers(0, 4))]
        inner = _random_expr(rng, depth + 1)
        return ex.neg(inner) if op == "neg" else ex.Unary(op, inner)
    return ex.Pow(_random_expr(rng, depth + 1), int(rng.integers(0, 4)))


def test_print_parse_roundtrip(rng):
    for _ in range(200):
        e = _random_expr(rng)
        text = ex.to_string(e)
        back = ex.parse(text, XV)
        assert back == e, f"round-trip failed for {text}"


# ---------------------------------------------------------------------------
# interval ranges
# ---------------------------------------------------------------------------

def test_interval_linear_image():
    e = _parse("-0.1*x1")
    lo, hi = ex.interval_range(e, IntervalVector([-2, 0, 0], [2, 0, 0]))
    assert (lo, hi) == pytest.approx((-0.2, 0.2))


def test_interval_full_period_cos():
    e = _parse("cos(x1)")
    lo, hi = ex.interval_range(e, IntervalVector([-math.pi, 0, 0], [math.pi, 0, 0]))
    assert (lo, hi) == (-1.0, 1.0)


def test_interval_partial_period_trig():
    e = _parse("sin(x1)")
    lo, hi = ex.interval_range(e, IntervalVector([0.1, 0, 0], [1.0, 0, 0]))
    assert lo == pytest.approx(math.sin(0.1))
    assert hi == pytest.approx(math.sin(1.0))
    lo, hi = ex.interval_range(e, IntervalVector([1.0, 0, 0], [2.5, 0, 0]))
    assert hi == 1.0 and lo == pytest.approx(min(math.sin(1.0), math.sin(2.5)))


def test_interval_cos_product_grid_enclosure(rng):
    # grid sampling must lie inside the returned enclosure
    e = _parse("(a1/b1)*cos(x1)*x2")
    box = IntervalVector([-50, 9, 0], [50, 11, 0])
    lo, hi = ex.interval_range(e, box)
    xs = np.linspace(-50, 50, 100)
    ys = np.linspace(9, 11, 100)
    vals = (35.63 / 15.0) * np.cos(xs)[:, None] * ys[None, :]
    assert vals.min() >= lo - 1e-12 and vals.max() <= hi + 1e-12


def test_interval_soundness_sampling(rng):
    exprs = ["0.05*(1 - x1^2)", "(a1/b1)*cos(x1)*x2", "exp(x3) - x1*x2",
             "x1^3 - 2*x2^2", "sin(x1)*sin(x2)"]
    box = IntervalVector([-2, -1, -0.5], [2, 1, 0.5])
    pts = box.sample(rng, 1000)
    for text in exprs:
        e = _parse(text)
        lo, hi = ex.interval_range(e, box)
        vals = ex.evaluate(e, pts)
        assert np.all(vals >= lo - 1e-10) and np.all(vals <= hi + 1e-10)


def test_interval_division_by_zero_interval():
    e = _parse("x1 / x2")
    with pytest.raises(ex.UnboundedRangeError):
        ex.interval_range(e, IntervalVector([0, -1, 0], [1, 1, 0]))


def test_interval_pow_even_includes_zero():
    e = _parse("x1^2")
    lo, hi = ex.interval_range(e, IntervalVector([-2, 0, 0], [1, 0, 0]))
    assert (lo, hi) == (0.0, 4.0)


# ---------------------------------------------------------------------------
# jacobian bounds
# ---------------------------------------------------------------------------

def test_jacobian_bounds_henon_entry(rng):
    f = [_parse("0.05*(1 - x1^2)"), _parse("0.3*x1")]
    box = IntervalVector([-2, -1, 0], [2, 1, 0])
    jb = ex.jacobian_bounds(f, box, n_cols=2)
    # dense sampling oracle for the (1,1) entry, derivative -0.1 x1
    xs = np.linspace(-2, 2, 2000)
    dvals = -0.1 * xs
    assert jb.lo[0, 0] <= dvals.min() + 1e-12
    assert jb.hi[0, 0] >= dvals.max() - 1e-12
    assert jb.lo[1, 0] == jb.hi[1, 0] == pytest.approx(0.3)


def test_jacobian_bounds_linear_map_exact(rng):
    A = rng.normal(size=(2, 3))
    f = []
    for i in range(2):
        text = " + ".join(f"({float(A[i, j])!r})*x{j+1}" for j in range(3))
        f.append(_parse(text))
    jb = ex.jacobian_bounds(f, IntervalVector([-1, -1, -1], [1, 1, 1]))
    assert np.allclose(jb.lo, A) and np.allclose(jb.hi, A)


def test_jacobian_bounds_cos_product_entry():
    f = [_parse("0"), _parse("0"), _parse("(a1/b1)*cos(x1)*x2")]
    box = IntervalVector([-50, 9, 0], [50, 11, 0])
    jb = ex.jacobian_bounds(f, box)
    xs = np.linspace(-50, 50, 3000)
    dvals = (35.63 / 15.0) * np.cos(xs)  # d f3 / d x2
    assert jb.lo[2, 1] <= dvals.min() + 1e-9
    assert jb.hi[2, 1] >= dvals.max() - 1e-9
    assert jb.hi[2, 1] == pytest.approx(35.63 / 15.0)


def test_substitute_composition():
    e = _parse("sin(x1) + x2")
    sub = ex.substitute(e, {0: _parse("x2*x3"), 1: ex.Const(2.0)})
    assert ex.evaluate(sub, np.array([0.0, 0.5, 1.0])) == pytest.approx(math.sin(0.5) + 2.0)
