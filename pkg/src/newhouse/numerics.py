"""Extended-precision complex scalars, 2-vectors, 2x2 matrices, root finding.

All arithmetic runs on MPFR/MPC (via gmpy2) at a configurable binary
precision, rounding to nearest.  Every operation here is pure: repeating a
computation at the same precision yields bit-identical results, so values
can be compared exactly across runs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import gmpy2
from gmpy2 import mpc, mpfr

DEFAULT_PRECISION = 212

Scalar = Union[int, float, str, mpfr, mpc]


def set_precision(bits: int = DEFAULT_PRECISION) -> None:
    """Set the working mantissa precision in bits (round-to-nearest)."""
    if bits < 24:
        raise ValueError("precision below 24 bits is not supported")
    gmpy2.get_context().precision = int(bits)


def get_precision() -> int:
    return gmpy2.get_context().precision


@contextmanager
def working_precision(bits: int):
    """Temporarily switch precision; restores the previous value on exit."""
    old = get_precision()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(old)


set_precision(DEFAULT_PRECISION)


def R(x: Scalar) -> mpfr:
    """Real scalar at working precision.  Strings parse exactly, then round."""
    if isinstance(x, mpc):
        if x.imag != 0:
            raise ValueError("complex value passed where a real was expected")
        return gmpy2.mpfr(x.real)
    return gmpy2.mpfr(x)


def C(re: Scalar = 0, im: Scalar = 0) -> mpc:
    """Complex scalar at working precision."""
    if isinstance(re, mpc):
        if im != 0:
            raise ValueError("cannot add an imaginary part to an mpc")
        return re
    return gmpy2.mpc(gmpy2.mpfr(re), gmpy2.mpfr(im))


def eps_root() -> mpfr:
    """2^{-p/2}: the precision-level tolerance used by consistency checks."""
    return R(2) ** (-(get_precision() // 2))


def cond_limit() -> mpfr:
    """2^{p/4}: Jacobian condition number beyond which a solve is refused."""
    return R(2) ** (get_precision() // 4)


def decimal_digits() -> int:
    """Decimal digits needed for a lossless round trip at working precision."""
    return int(math.ceil(get_precision() * math.log10(2))) + 2


def fmt(x: Union[mpfr, mpc]) -> str:
    """Full-precision decimal string; parses back bit-exactly via R()/C()."""
    if isinstance(x, mpc):
        return "(%s, %s)" % (fmt(x.real), fmt(x.imag))
    if gmpy2.is_nan(x):
        return "nan"
    if not gmpy2.is_finite(x):
        return "-inf" if x < 0 else "inf"
    if x == 0:
        return "-0" if gmpy2.is_signed(x) else "0"
    digits, exp, _ = x.digits(10, decimal_digits())
    sign = ""
    if digits.startswith("-"):
        sign, digits = "-", digits[1:]
    return "%s%s.%se%+d" % (sign, digits[0], digits[1:], exp - 1)


def parse_complex(text: str) -> mpc:
    """Inverse of fmt() for complex values; also accepts a bare real string."""
    s = text.strip()
    if s.startswith("(") and s.endswith(")"):
        re_s, im_s = s[1:-1].split(",")
        return C(re_s.strip(), im_s.strip())
    return C(s)


# ---------------------------------------------------------------------------
# errors

class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class NoConvergence(ToolkitError):
    def __init__(self, msg: str, iterations: int = 0, residual=None, point=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual
        self.point = point


class SingularJacobian(ToolkitError):
    def __init__(self, msg: str, iterations: int = 0, condition=None):
        super().__init__(msg)
        self.iterations = iterations
        self.condition = condition


# ---------------------------------------------------------------------------
# 2-vectors and 2x2 matrices over C

@dataclass(frozen=True)
class Vec2:
    x: mpc
    y: mpc

    @staticmethod
    def of(x: Scalar, y: Scalar) -> "Vec2":
        return Vec2(C(x), C(y))

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def scale(self, c: Scalar) -> "Vec2":
        return Vec2(self.x * C(c), self.y * C(c))

    def norm(self) -> mpfr:
        """Sup norm; immune to overflow for any representable entries."""
        return max(abs(self.x), abs(self.y))

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True)
class Mat2:
    m11: mpc
    m12: mpc
    m21: mpc
    m22: mpc

    @staticmethod
    def of(m11, m12, m21, m22) -> "Mat2":
        return Mat2(C(m11), C(m12), C(m21), C(m22))

    @staticmethod
    def identity() -> "Mat2":
        return Mat2.of(1, 0, 0, 1)

    @staticmethod
    def diag(a: Scalar, b: Scalar) -> "Mat2":
        return Mat2(C(a), C(0), C(0), C(b))

    def trace(self) -> mpc:
        return self.m11 + self.m22

    def det(self) -> mpc:
        return self.m11 * self.m22 - self.m12 * self.m21

    def __add__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.m11 + other.m11, self.m12 + other.m12,
                    self.m21 + other.m21, self.m22 + other.m22)

    def __sub__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.m11 - other.m11, self.m12 - other.m12,
                    self.m21 - other.m21, self.m22 - other.m22)

    def __mul__(self, other: "Mat2") -> "Mat2":
        return Mat2(
            self.m11 * other.m11 + self.m12 * other.m21,
            self.m11 * other.m12 + self.m12 * other.m22,
            self.m21 * other.m11 + self.m22 * other.m21,
            self.m21 * other.m12 + self.m22 * other.m22,
        )

    def apply(self, v: Vec2) -> Vec2:
        return Vec2(self.m11 * v.x + self.m12 * v.y,
                    self.m21 * v.x + self.m22 * v.y)

    def scale(self, c: Scalar) -> "Mat2":
        c = C(c)
        return Mat2(self.m11 * c, self.m12 * c, self.m21 * c, self.m22 * c)

    def norm(self) -> mpfr:
        """Row-sum (infinity) norm."""
        return max(abs(self.m11) + abs(self.m12), abs(self.m21) + abs(self.m22))

    def inverse(self) -> "Mat2":
        d = self.det()
        if d == 0:
            raise SingularJacobian("2x2 matrix is exactly singular")
        return Mat2(self.m22 / d, -self.m12 / d, -self.m21 / d, self.m11 / d)

    def solve(self, rhs: Vec2) -> Vec2:
        d = self.det()
        if d == 0:
            raise SingularJacobian("2x2 system is exactly singular")
        return Vec2((self.m22 * rhs.x - self.m12 * rhs.y) / d,
                    (self.m11 * rhs.y - self.m21 * rhs.x) / d)

    def condition(self) -> mpfr:
        d = self.det()
        if d == 0:
            return gmpy2.inf()
        return self.norm() * self.inverse().norm()


def _moduli_key(z: mpc) -> Tuple[mpfr, mpfr, mpfr]:
    return (abs(z), z.real, z.imag)


def eig2(m: Mat2) -> Tuple[mpc, mpc]:
    """Eigenvalues of a 2x2 matrix as roots of z^2 - tr z + det.

    Ordered by descending modulus; ties broken by descending real part,
    then descending imaginary part.  A double root is returned twice.
    """
    t = m.trace()
    d = m.det()
    s = gmpy2.sqrt(t * t - 4 * d)
    # Choose the non-cancelling branch, then recover the small root from det.
    if (t.conjugate() * s).real >= 0:
        big = (t + s) / 2
    else:
        big = (t - s) / 2
    if big == 0:
        r1, r2 = (t + s) / 2, (t - s) / 2
    else:
        r1, r2 = big, d / big
    if _moduli_key(r1) >= _moduli_key(r2):
        return r1, r2
    return r2, r1


# ---------------------------------------------------------------------------
# Newton solver on C^k, k in {1, 2, 3}

@dataclass(frozen=True)
class NewtonConfig:
    """Residual-based Newton termination: stop once sup|f(x)| <= tol."""
    max_iters: int = 60
    tol: Optional[mpfr] = None  # defaults to 2^{-2p/3} at solve time
    damping: float = 1.0

    def effective_tol(self) -> mpfr:
        if self.tol is not None:
            t = R(self.tol)
        else:
            t = R(2) ** (-(2 * get_precision()) // 3)
        if not t > 0:
            raise ValueError("NewtonConfig.tol must be positive")
        return t

    def check(self) -> None:
        if self.max_iters < 1:
            raise ValueError("NewtonConfig.max_iters must be >= 1")
        if not (0 < self.damping <= 1):
            raise ValueError("NewtonConfig.damping must lie in (0, 1]")


@dataclass(frozen=True)
class NewtonResult:
    point: object
    iterations: int
    residual: mpfr


def _solve3(jac, rhs):
    """Gaussian elimination with partial pivoting for a 3x3 complex system."""
    a = [list(row) for row in jac]
    b = list(rhs)
    for col in range(3):
        piv = max(range(col, 3), key=lambda r: abs(a[r][col]))
        if abs(a[piv][col]) == 0:
            raise SingularJacobian("3x3 Jacobian is exactly singular")
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            b[col], b[piv] = b[piv], b[col]
        for r in range(col + 1, 3):
            f = a[r][col] / a[col][col]
            for c in range(col, 3):
                a[r][c] -= f * a[col][c]
            b[r] -= f * b[col]
    x = [C(0)] * 3
    for r in (2, 1, 0):
        acc = b[r]
        for c in range(r + 1, 3):
            acc -= a[r][c] * x[c]
        x[r] = acc / a[r][r]
    return tuple(x)


def _norm3(rows) -> mpfr:
    return max(sum(abs(v) for v in row) for row in rows)


def _inverse3(jac):
    cols = []
    for k in range(3):
        e = tuple(C(1) if i == k else C(0) for i in range(3))
        cols.append(_solve3(jac, e))
    return [[cols[c][r] for c in range(3)] for r in range(3)]


def newton_solve(f: Callable, x0, cfg: NewtonConfig = NewtonConfig()) -> NewtonResult:
    """Damped Newton iteration on C^k, k in {1, 2, 3}.

    `f(x)` must return `(value, jacobian)`; the shapes follow the seed:
    scalar mpc -> (mpc, mpc), Vec2 -> (Vec2, Mat2), length-3 tuple ->
    (tuple, 3x3 nested tuple).  Raises NoConvergence when max_iters is
    exhausted, SingularJacobian when the Jacobian condition number exceeds
    2^{p/4} (or an exact zero pivot appears).
    """
    cfg.check()
    tol = cfg.effective_tol()
    limit = cond_limit()
    damp = R(cfg.damping)

    if isinstance(x0, Vec2):
        x = x0
        for it in range(cfg.max_iters + 1):
            fx, jac = f(x)
            res = fx.norm()
            if res <= tol:
                return NewtonResult(x, it, res)
            if it == cfg.max_iters:
                raise NoConvergence("newton_solve: max_iters reached",
                                    it, res, x)
            if jac.det() == 0:
                raise SingularJacobian("newton_solve: singular Jacobian", it)
            cond = jac.condition()
            if cond > limit:
                raise SingularJacobian("newton_solve: ill-conditioned Jacobian",
                                       it, cond)
            step = jac.solve(fx)
            x = x - step.scale(damp)

    if isinstance(x0, (tuple, list)) and len(x0) == 3:
        x = tuple(C(v) for v in x0)
        for it in range(cfg.max_iters + 1):
            fx, jac = f(x)
            res = max(abs(v) for v in fx)
            if res <= tol:
                return NewtonResult(x, it, res)
            if it == cfg.max_iters:
                raise NoConvergence("newton_solve: max_iters reached",
                                    it, res, x)
            cond = _norm3(jac) * _norm3(_inverse3(jac))
            if cond > limit:
                raise SingularJacobian("newton_solve: ill-conditioned Jacobian",
                                       it, cond)
            step = _solve3(jac, fx)
            x = tuple(xv - damp * sv for xv, sv in zip(x, step))

    if isinstance(x0, (tuple, list)):
        raise ValueError("newton_solve supports k in {1, 2, 3} only")

    # scalar case
    x = C(x0)
    for it in range(cfg.max_iters + 1):
        fx, dfx = f(x)
        res = abs(fx)
        if res <= tol:
            return NewtonResult(x, it, res)
        if it == cfg.max_iters:
            raise NoConvergence("newton_solve: max_iters reached", it, res, x)
        if dfx == 0:
            raise SingularJacobian("newton_solve: zero derivative", it)
        x = x - damp * fx / dfx
    raise AssertionError("unreachable")
