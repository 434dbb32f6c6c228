import random

from newhouse.numerics import C, R, eps_root
from newhouse.series import (
    Curve1,
    Series1,
    Series2,
    compose_pair,
    invert_pair,
)


def _rand_series1(rng, order):
    return Series1([C(rng.uniform(-2, 2), rng.uniform(-2, 2))
                    for _ in range(order + 1)])


def _rand_series2(rng, order, zero_const=False):
    s = Series2(order)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            if zero_const and i == j == 0:
                continue
            s.c[(i, j)] = C(rng.uniform(-1, 1), rng.uniform(-1, 1))
    return s


def test_series1_mul_matches_pointwise():
    rng = random.Random(1)
    a, b = _rand_series1(rng, 8), _rand_series1(rng, 8)
    prod = a.mul(b)
    # at a small point the truncation error is below the check tolerance
    s = C("0.01", "0.003")
    full = a.eval(s) * b.eval(s)
    assert abs(prod.eval(s) - full) < R("1e-15")


def test_series1_derivative_and_rescale():
    a = Series1([C(1), C(2), C(3), C(4)])
    d = a.derivative()
    assert d.c[0] == 2 and d.c[1] == 6 and d.c[2] == 12
    r = a.rescale_parameter(C(2))
    assert r.c == [C(1), C(4), C(12), C(32)]
    v, dv = a.eval_with_derivative(C("0.5"))
    assert abs(v - (1 + 1 + C("0.75") + C("0.5"))) < eps_root()
    assert abs(dv - (2 + 3 + 3)) < eps_root()


def test_series2_mul_and_eval_consistency():
    rng = random.Random(2)
    a, b = _rand_series2(rng, 6), _rand_series2(rng, 6)
    prod = a.mul(b)
    # dropped cross terms start at degree 7, so at 1e-3 they sit near 1e-21
    x, y = C("0.001"), C("-0.002")
    assert abs(prod.eval(x, y) - a.eval(x, y) * b.eval(x, y)) < R("1e-18")


def test_series2_partials():
    s = Series2(4, {(2, 1): C(3), (0, 2): C(5)})
    px = s.partial(0)
    py = s.partial(1)
    assert px.get(1, 1) == 6
    assert py.get(2, 0) == 3 and py.get(0, 1) == 10


def test_compose_pair_against_pointwise():
    rng = random.Random(3)
    s = _rand_series2(rng, 6)
    a = _rand_series2(rng, 6, zero_const=True)
    b = _rand_series2(rng, 6, zero_const=True)
    comp = compose_pair(s, a, b)
    x, y = C("0.0004"), C("0.0007")
    direct = s.eval(a.eval(x, y), b.eval(x, y))
    assert abs(comp.eval(x, y) - direct) < R("1e-19")


def test_invert_pair_round_trip():
    rng = random.Random(4)
    order = 8
    a = _rand_series2(rng, order, zero_const=True)
    b = _rand_series2(rng, order, zero_const=True)
    # make the linear part well-conditioned
    a.c[(1, 0)], a.c[(0, 1)] = C(1), C("0.2")
    b.c[(1, 0)], b.c[(0, 1)] = C("-0.1"), C("1.5")
    u, v = invert_pair(a, b)
    comp_u = compose_pair(u, a, b)
    comp_v = compose_pair(v, a, b)
    tol = eps_root()
    for (i, j), val in comp_u.c.items():
        want = C(1) if (i, j) == (1, 0) else C(0)
        assert abs(val - want) < tol
    for (i, j), val in comp_v.c.items():
        want = C(1) if (i, j) == (0, 1) else C(0)
        assert abs(val - want) < tol


def test_curve1_eval_with_derivative():
    cx = Series1([C(0), C(1), C(2)])
    cy = Series1([C(1), C(0), C(-1)])
    g = Curve1(cx, cy)
    val, der = g.eval_with_derivative(C("0.5"))
    assert abs(val.x - 1) < eps_root()       # 0.5 + 2*0.25
    assert abs(val.y - C("0.75")) < eps_root()
    assert abs(der.x - 3) < eps_root()       # 1 + 4*0.5
    assert abs(der.y + 1) < eps_root()
