"""Truncated power series over C in one and two variables.

Series1 holds coefficients c_0..c_M of a curve parameter; Series2 holds a
bivariate table {(i, j): c_ij} with total degree i + j <= M.  All products
and compositions truncate at the series order, and all operations are exact
polynomial arithmetic at the working precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

from gmpy2 import mpc

from .numerics import C, Mat2, Vec2


class Series1:
    __slots__ = ("c",)

    def __init__(self, coeffs: List[mpc]):
        self.c = list(coeffs)

    @staticmethod
    def zero(order: int) -> "Series1":
        return Series1([C(0)] * (order + 1))

    @property
    def order(self) -> int:
        return len(self.c) - 1

    def copy(self) -> "Series1":
        return Series1(self.c)

    def __add__(self, other: "Series1") -> "Series1":
        assert len(self.c) == len(other.c)
        return Series1([a + b for a, b in zip(self.c, other.c)])

    def __sub__(self, other: "Series1") -> "Series1":
        assert len(self.c) == len(other.c)
        return Series1([a - b for a, b in zip(self.c, other.c)])

    def scale(self, k) -> "Series1":
        k = C(k)
        return Series1([a * k for a in self.c])

    def mul(self, other: "Series1") -> "Series1":
        n = len(self.c)
        out = [C(0)] * n
        for i, a in enumerate(self.c):
            if a == 0:
                continue
            for j in range(n - i):
                b = other.c[j]
                if b != 0:
                    out[i + j] += a * b
        return Series1(out)

    def derivative(self) -> "Series1":
        return Series1([k * self.c[k] for k in range(1, len(self.c))] + [C(0)])

    def eval(self, s) -> mpc:
        s = C(s)
        acc = C(0)
        for a in reversed(self.c):
            acc = acc * s + a
        return acc

    def eval_with_derivative(self, s) -> Tuple[mpc, mpc]:
        s = C(s)
        acc = C(0)
        dacc = C(0)
        for a in reversed(self.c):
            dacc = dacc * s + acc
            acc = acc * s + a
        return acc, dacc

    def eval_jet(self, s) -> Tuple[mpc, mpc, mpc]:
        """Value, first and second derivative at s (Horner triple)."""
        s = C(s)
        acc = C(0)
        d1 = C(0)
        d2 = C(0)
        for a in reversed(self.c):
            d2 = d2 * s + d1
            d1 = d1 * s + acc
            acc = acc * s + a
        return acc, d1, 2 * d2

    def rescale_parameter(self, k) -> "Series1":
        """Reparametrize s -> k*s: c_m -> c_m k^m."""
        k = C(k)
        out = []
        pw = C(1)
        for a in self.c:
            out.append(a * pw)
            pw = pw * k
        return Series1(out)


@dataclass(frozen=True)
class Curve1:
    """Truncated power-series curve C -> C^2."""
    x: Series1
    y: Series1

    @property
    def order(self) -> int:
        return self.x.order

    def eval(self, s) -> Vec2:
        return Vec2(self.x.eval(s), self.y.eval(s))

    def eval_with_derivative(self, s) -> Tuple[Vec2, Vec2]:
        vx, dx = self.x.eval_with_derivative(s)
        vy, dy = self.y.eval_with_derivative(s)
        return Vec2(vx, vy), Vec2(dx, dy)

    def eval_jet(self, s) -> Tuple[Vec2, Vec2, Vec2]:
        vx, dx, ddx = self.x.eval_jet(s)
        vy, dy, ddy = self.y.eval_jet(s)
        return Vec2(vx, vy), Vec2(dx, dy), Vec2(ddx, ddy)

    def derivative(self) -> "Curve1":
        return Curve1(self.x.derivative(), self.y.derivative())

    def coefficient(self, k: int) -> Vec2:
        return Vec2(self.x.c[k], self.y.c[k])

    def rescale_parameter(self, k) -> "Curve1":
        return Curve1(self.x.rescale_parameter(k), self.y.rescale_parameter(k))


class Series2:
    __slots__ = ("order", "c")

    def __init__(self, order: int, table: Dict[Tuple[int, int], mpc] = None):
        self.order = order
        self.c: Dict[Tuple[int, int], mpc] = {}
        if table:
            for key, val in table.items():
                if key[0] + key[1] <= order and val != 0:
                    self.c[key] = C(val)

    @staticmethod
    def zero(order: int) -> "Series2":
        return Series2(order)

    @staticmethod
    def variable(order: int, which: int) -> "Series2":
        key = (1, 0) if which == 0 else (0, 1)
        return Series2(order, {key: C(1)})

    def get(self, i: int, j: int) -> mpc:
        return self.c.get((i, j), C(0))

    def copy(self) -> "Series2":
        s = Series2(self.order)
        s.c = dict(self.c)
        return s

    def __add__(self, other: "Series2") -> "Series2":
        out = self.copy()
        for key, val in other.c.items():
            out.c[key] = out.c.get(key, C(0)) + val
        return out

    def __sub__(self, other: "Series2") -> "Series2":
        out = self.copy()
        for key, val in other.c.items():
            out.c[key] = out.c.get(key, C(0)) - val
        return out

    def scale(self, k) -> "Series2":
        k = C(k)
        out = Series2(self.order)
        out.c = {key: val * k for key, val in self.c.items()}
        return out

    def mul(self, other: "Series2") -> "Series2":
        out = Series2(self.order)
        acc = out.c
        for (i1, j1), a in self.c.items():
            d1 = i1 + j1
            for (i2, j2), b in other.c.items():
                if d1 + i2 + j2 > self.order:
                    continue
                key = (i1 + i2, j1 + j2)
                prev = acc.get(key)
                acc[key] = a * b if prev is None else prev + a * b
        return out

    def partial(self, which: int) -> "Series2":
        out = Series2(self.order)
        for (i, j), a in self.c.items():
            if which == 0 and i > 0:
                out.c[(i - 1, j)] = out.c.get((i - 1, j), C(0)) + i * a
            elif which == 1 and j > 0:
                out.c[(i, j - 1)] = out.c.get((i, j - 1), C(0)) + j * a
        return out

    def homogeneous(self, k: int) -> "Series2":
        out = Series2(self.order)
        for (i, j), a in self.c.items():
            if i + j == k:
                out.c[(i, j)] = a
        return out

    def truncate_above(self, k: int) -> "Series2":
        out = Series2(self.order)
        for (i, j), a in self.c.items():
            if i + j <= k:
                out.c[(i, j)] = a
        return out

    def max_order_present(self) -> int:
        return max((i + j for (i, j) in self.c), default=0)

    def eval(self, x, y) -> mpc:
        x, y = C(x), C(y)
        rows: Dict[int, Dict[int, mpc]] = {}
        for (i, j), a in self.c.items():
            rows.setdefault(i, {})[j] = a
        acc = C(0)
        prev_i = None
        for i in sorted(rows, reverse=True):  # Horner in x over sparse rows
            if prev_i is not None:
                acc = acc * x ** (prev_i - i)
            row = rows[i]
            racc = C(0)
            for j in range(max(row), -1, -1):  # dense Horner in y
                racc = racc * y + row.get(j, C(0))
            acc = acc + racc
            prev_i = i
        if prev_i is not None and prev_i > 0:
            acc = acc * x ** prev_i
        return acc

    def compose_linear(self, l11, l12, l21, l22) -> "Series2":
        """Substitute x -> l11 x + l12 y, y -> l21 x + l22 y."""
        lx = Series2(self.order, {(1, 0): l11, (0, 1): l12})
        ly = Series2(self.order, {(1, 0): l21, (0, 1): l22})
        table = PowerTable2(lx, ly, self.order)
        out = Series2(self.order)
        for (i, j), a in self.c.items():
            out = out + table.power(i, j).scale(a)
        return out


class PowerTable2:
    """Caches products A^i B^j (truncated) for composition work."""

    def __init__(self, a: Series2, b: Series2, order: int):
        self.order = order
        one = Series2(order, {(0, 0): C(1)})
        self._a_pows = [one, a]
        self._b_pows = [one, b]
        self._cache: Dict[Tuple[int, int], Series2] = {}

    def _apow(self, i: int) -> Series2:
        while len(self._a_pows) <= i:
            self._a_pows.append(self._a_pows[-1].mul(self._a_pows[1]))
        return self._a_pows[i]

    def _bpow(self, j: int) -> Series2:
        while len(self._b_pows) <= j:
            self._b_pows.append(self._b_pows[-1].mul(self._b_pows[1]))
        return self._b_pows[j]

    def power(self, i: int, j: int) -> Series2:
        key = (i, j)
        got = self._cache.get(key)
        if got is None:
            if j == 0:
                got = self._apow(i)
            elif i == 0:
                got = self._bpow(j)
            else:
                got = self._apow(i).mul(self._bpow(j))
            self._cache[key] = got
        return got


def compose_pair(s: Series2, a: Series2, b: Series2,
                 table: PowerTable2 = None) -> Series2:
    """s(a(x,y), b(x,y)) truncated; a, b must have zero constant term."""
    if a.get(0, 0) != 0 or b.get(0, 0) != 0:
        raise ValueError("composition target must have zero constant term")
    if table is None:
        table = PowerTable2(a, b, s.order)
    out = Series2(s.order)
    for (i, j), coeff in s.c.items():
        out = out + table.power(i, j).scale(coeff)
    return out


def invert_pair(a: Series2, b: Series2) -> Tuple[Series2, Series2]:
    """Inverse map germ of (a, b): returns (u, v) with u(a,b)=x, v(a,b)=y.

    a, b have zero constant term and an invertible linear part.  Solved
    order by order: each homogeneous defect is pushed through the inverse
    of the linear part.
    """
    order = a.order
    lin = Mat2(a.get(1, 0), a.get(0, 1), b.get(1, 0), b.get(0, 1))
    linv = lin.inverse()
    table = PowerTable2(a, b, order)

    u = Series2(order, {(1, 0): linv.m11, (0, 1): linv.m12})
    v = Series2(order, {(1, 0): linv.m21, (0, 1): linv.m22})
    target_u = Series2.variable(order, 0)
    target_v = Series2.variable(order, 1)

    for k in range(2, order + 1):
        cu = compose_pair(u, a, b, table)
        cv = compose_pair(v, a, b, table)
        du = (target_u - cu).homogeneous(k)
        dv = (target_v - cv).homogeneous(k)
        u = u + du.compose_linear(linv.m11, linv.m12, linv.m21, linv.m22)
        v = v + dv.compose_linear(linv.m11, linv.m12, linv.m21, linv.m22)
    return u, v
