import random

import gmpy2
import mpmath
import pytest

from newhouse.numerics import (
    C,
    Mat2,
    NewtonConfig,
    NewtonResult,
    NoConvergence,
    R,
    SingularJacobian,
    Vec2,
    eig2,
    eps_root,
    fmt,
    get_precision,
    newton_solve,
    parse_complex,
    set_precision,
    working_precision,
)


@pytest.fixture(autouse=True)
def _default_precision():
    set_precision(212)
    yield


def test_eig2_identity():
    e1, e2 = eig2(Mat2.identity())
    assert e1 == 1 and e2 == 1


def test_eig2_rotation():
    e1, e2 = eig2(Mat2.of(0, 1, -1, 0))
    assert e1 == C(0, 1)
    assert e2 == C(0, -1)


def test_eig2_henon_jacobian_moduli():
    # Quadratic-formula oracle for z^2 - tr z + det with tr=4.06703, det=0.05:
    # roots (tr +- sqrt(tr^2 - 4 det))/2 = 4.0547043..., 0.0123303...
    m = Mat2.of(0, "-0.05", 1, "4.06703")
    e1, e2 = eig2(m)
    tr, det = R("4.06703"), R("0.05")
    s = gmpy2.sqrt(tr * tr - 4 * det)
    assert abs(e1 - (tr + s) / 2) < R("1e-60")
    assert abs(e2 - (tr - s) / 2) < R("1e-60")
    # 4 significant digits
    assert abs(abs(e1) - R("4.05470")) < R("1e-4")
    assert abs(abs(e2) - R("0.012330")) < R("5e-6")


def test_eig2_double_root_returned_twice():
    e1, e2 = eig2(Mat2.of(3, 1, 0, 3))
    assert e1 == 3 and e2 == 3


def test_eig2_sum_product_consistency_randomized():
    rng = random.Random(20240901)
    tol = eps_root()
    for _ in range(200):
        m = Mat2.of(
            C(rng.uniform(-5, 5), rng.uniform(-5, 5)),
            C(rng.uniform(-5, 5), rng.uniform(-5, 5)),
            C(rng.uniform(-5, 5), rng.uniform(-5, 5)),
            C(rng.uniform(-5, 5), rng.uniform(-5, 5)),
        )
        e1, e2 = eig2(m)
        assert abs(e1) >= abs(e2)
        assert abs(e1 * e2 - m.det()) <= tol * max(R(1), abs(m.det()))
        assert abs(e1 + e2 - m.trace()) <= tol * max(R(1), abs(m.trace()))


def test_eig2_against_mpmath_oracle():
    mpmath.mp.prec = 212
    m = Mat2.of("1.25", "-0.75", "2.5", "0.125")
    e1, e2 = eig2(m)
    em = mpmath.mp.eig(mpmath.matrix([["1.25", "-0.75"], ["2.5", "0.125"]]),
                       left=False, right=False)
    got = sorted([complex(e1), complex(e2)], key=lambda z: (abs(z), z.real, z.imag))
    want = sorted([complex(v) for v in em], key=lambda z: (abs(z), z.real, z.imag))
    for g, w in zip(got, want):
        assert abs(g - w) < 1e-12


def test_newton_exact_quadratic_root():
    def f(z):
        return z * z - 4, 2 * z

    res = newton_solve(f, C(3))
    assert abs(res.point - 2) <= res.residual + eps_root()
    assert res.iterations <= 10


def test_newton_henon_fixed_point_quadratic():
    # Closed-form oracle: x^2 + 1.05 x - 2 = 0, positive root
    # (-1.05 + sqrt(1.05^2 + 8)) / 2 = 0.9835153...
    def f(x):
        return x * x + R("1.05") * x - 2, 2 * x + R("1.05")

    res = newton_solve(f, C(1))
    root = (-R("1.05") + gmpy2.sqrt(R("1.05") ** 2 + 8)) / 2
    assert abs(res.point - root) < R("1e-55")
    assert abs(res.point - R("0.98352")) < R("1e-5")


def test_newton_degenerate_double_root_no_spurious_singular():
    # z^2 at z0=0.1: derivative never vanishes along the orbit, so the
    # solver must either converge (loose tol) or hit max_iters, never
    # report SingularJacobian.
    def f(z):
        return z * z, 2 * z

    res = newton_solve(f, C("0.1"), NewtonConfig(max_iters=200, tol=R("1e-30")))
    assert abs(res.point) < R("1e-14")
    with pytest.raises(NoConvergence):
        newton_solve(f, C("0.1"), NewtonConfig(max_iters=10, tol=R("1e-60")))


def test_newton_singular_jacobian_exact_zero():
    def f(z):
        return z * z + 1, C(0)

    with pytest.raises(SingularJacobian):
        newton_solve(f, C(1))


def test_newton_vec2_system():
    # f(x, y) = (x^2 - y, y^2 - 1) -> root (1, 1) (also (-1,1), (+-i,-1))
    def f(v):
        return (Vec2(v.x * v.x - v.y, v.y * v.y - 1),
                Mat2(2 * v.x, C(-1), C(0), 2 * v.y))

    res = newton_solve(f, Vec2.of("1.2", "0.8"))
    assert (res.point - Vec2.of(1, 1)).norm() < R("1e-50")


def test_newton_k3_system():
    # Decoupled cubic system with known roots.
    def f(x):
        vals = (x[0] ** 2 - 2, x[1] ** 2 - 3, x[2] ** 3 - 5)
        jac = ((2 * x[0], C(0), C(0)),
               (C(0), 2 * x[1], C(0)),
               (C(0), C(0), 3 * x[2] ** 2))
        return vals, jac

    res = newton_solve(f, (C("1.4"), C("1.7"), C("1.7")))
    assert abs(res.point[0] - gmpy2.sqrt(R(2))) < R("1e-50")
    assert abs(res.point[1] - gmpy2.sqrt(R(3))) < R("1e-50")
    assert abs(res.point[2] ** 3 - 5) < R("1e-50")


def test_newton_random_polynomials_recover_roots():
    # Random monic polynomials of degree <= 4 with planted roots; Newton
    # from a seed within 10% must recover the root to tol.
    rng = random.Random(777)
    for _ in range(40):
        deg = rng.randint(2, 4)
        roots = [C(rng.uniform(-2, 2), rng.uniform(-2, 2)) for _ in range(deg)]
        target = roots[0]
        if abs(target) < 0.1:
            continue

        def f(z):
            val = C(1)
            der = C(0)
            for r in roots:
                der = der * (z - r) + val
                val = val * (z - r)
            return val, der

        seed = target * C(1 + rng.uniform(-0.1, 0.1), rng.uniform(-0.02, 0.02))
        res = newton_solve(f, seed, NewtonConfig(max_iters=100))
        assert min(abs(res.point - r) for r in roots) < R("1e-30")


def test_arithmetic_determinism_bit_identical():
    def run():
        acc = C("0.1", "0.3")
        for k in range(1, 500):
            acc = acc * C("0.999", "0.001") + C(1) / k
        return acc

    a, b = run(), run()
    assert a == b
    e1 = eig2(Mat2.of("1.5", "2.5", "-0.25", "0.125"))
    e2 = eig2(Mat2.of("1.5", "2.5", "-0.25", "0.125"))
    assert e1 == e2


def test_precision_is_configurable_and_scoped():
    assert get_precision() == 212
    with working_precision(64):
        assert get_precision() == 64
        x = R(2) / 3
    assert get_precision() == 212
    y = R(2) / 3
    assert x != y  # different precisions round differently


def test_fmt_round_trip_exact():
    x = R(2) / 3
    assert R(fmt(x)) == x
    z = C(R(1) / 7, -R(22) / 7)
    assert parse_complex(fmt(z)) == z


def test_mat2_det_multiplicative_and_trace_linear():
    rng = random.Random(5)
    tol = eps_root()
    for _ in range(50):
        a = Mat2.of(*[C(rng.uniform(-3, 3), rng.uniform(-3, 3)) for _ in range(4)])
        b = Mat2.of(*[C(rng.uniform(-3, 3), rng.uniform(-3, 3)) for _ in range(4)])
        lhs = (a * b).det()
        rhs = a.det() * b.det()
        assert abs(lhs - rhs) <= tol * max(R(1), abs(rhs))
        assert abs((a + b).trace() - a.trace() - b.trace()) <= tol
