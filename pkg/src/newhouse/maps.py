"""Polynomial maps of C^2 and holomorphic parameter families.

A PolyMap2 is a dense monomial table per component; evaluation is exact
polynomial arithmetic (Horner over the monomial ordering) at the working
precision.  A PolyFamily carries coefficients that are themselves
polynomials in the parameters (t, a, tau_1..tau_T); specializing the
parameters yields a PolyMap2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import gmpy2
from gmpy2 import mpc, mpfr

from .numerics import C, Mat2, R, ToolkitError, Vec2, parse_complex, fmt

ESCAPE_BOUND_LOG2 = 64

MonKey = Tuple[int, int]
ParamKey = Tuple[int, ...]  # exponents of (t, a, tau_1..tau_T)


class Overflow(ToolkitError):
    """An orbit coordinate exceeded the escape bound 2^64."""

    def __init__(self, msg: str, step: int = 0):
        super().__init__(msg)
        self.step = step


class SaddleLost(ToolkitError):
    """Saddle continuation failed at a parameter grid point."""


def _binomial(n: int, k: int) -> int:
    return math.comb(n, k)


class PolyMap2:
    """Polynomial map of C^2 with degree bound d >= 1."""

    def __init__(self, degree: int, coeffs_x: Dict[MonKey, mpc],
                 coeffs_y: Dict[MonKey, mpc]):
        self.degree = degree
        self.coeffs = (
            {k: C(v) for k, v in coeffs_x.items() if v != 0},
            {k: C(v) for k, v in coeffs_y.items() if v != 0},
        )
        for comp in self.coeffs:
            for (i, j) in comp:
                if i < 0 or j < 0 or i + j > degree:
                    raise ValueError("monomial (%d, %d) out of degree bound" % (i, j))
        self._rows = tuple(self._build_rows(comp) for comp in self.coeffs)
        self._partial_rows = tuple(
            tuple(self._build_rows(self._partial_table(comp, which))
                  for which in (0, 1))
            for comp in self.coeffs
        )
        self._second_rows = tuple(
            tuple(self._build_rows(self._partial_table(
                self._partial_table(comp, w1), w2))
                  for (w1, w2) in ((0, 0), (0, 1), (1, 1)))
            for comp in self.coeffs
        )

    @staticmethod
    def _build_rows(table: Dict[MonKey, mpc]):
        if not table:
            return ()
        imax = max(i for (i, _) in table)
        rows: List[Optional[List[mpc]]] = [None] * (imax + 1)
        for (i, j), val in table.items():
            jmax = max(jj for (ii, jj) in table if ii == i)
            if rows[i] is None:
                rows[i] = [C(0)] * (jmax + 1)
            rows[i][j] = val
        return tuple(tuple(r) if r is not None else None for r in rows)

    @staticmethod
    def _partial_table(table: Dict[MonKey, mpc], which: int) -> Dict[MonKey, mpc]:
        out: Dict[MonKey, mpc] = {}
        for (i, j), val in table.items():
            if which == 0 and i > 0:
                out[(i - 1, j)] = out.get((i - 1, j), C(0)) + i * val
            elif which == 1 and j > 0:
                out[(i, j - 1)] = out.get((i, j - 1), C(0)) + j * val
        return {k: v for k, v in out.items() if v != 0}

    @staticmethod
    def _eval_rows(rows, x: mpc, y: mpc) -> mpc:
        acc = C(0)
        for row in reversed(rows):
            acc = acc * x
            if row is None:
                continue
            racc = C(0)
            for cval in reversed(row):
                racc = racc * y + cval
            acc = acc + racc
        return acc

    def eval(self, z: Vec2) -> Vec2:
        return Vec2(self._eval_rows(self._rows[0], z.x, z.y),
                    self._eval_rows(self._rows[1], z.x, z.y))

    def jacobian(self, z: Vec2) -> Mat2:
        return Mat2(
            self._eval_rows(self._partial_rows[0][0], z.x, z.y),
            self._eval_rows(self._partial_rows[0][1], z.x, z.y),
            self._eval_rows(self._partial_rows[1][0], z.x, z.y),
            self._eval_rows(self._partial_rows[1][1], z.x, z.y),
        )

    def second_derivative(self, z: Vec2):
        """Per component: (f_xx, f_xy, f_yy) evaluated at z."""
        return tuple(
            tuple(self._eval_rows(self._second_rows[comp][k], z.x, z.y)
                  for k in range(3))
            for comp in (0, 1)
        )

    def second_directional(self, z: Vec2, v: Vec2, w: Vec2) -> Vec2:
        """Bilinear form D^2 F(z)(v, w), one complex value per component."""
        hess = self.second_derivative(z)
        out = []
        for comp in (0, 1):
            xx, xy, yy = hess[comp]
            out.append(xx * v.x * w.x + xy * (v.x * w.y + v.y * w.x)
                       + yy * v.y * w.y)
        return Vec2(out[0], out[1])

    def shifted(self, p: Vec2, recenter: bool = False) -> "PolyMap2":
        """Taylor shift: returns G with G(z) = F(p + z), minus p if recenter."""
        new_tables: List[Dict[MonKey, mpc]] = [{}, {}]
        for comp in (0, 1):
            for (i, j), val in self.coeffs[comp].items():
                for ii in range(i + 1):
                    xi = val * _binomial(i, ii) * p.x ** (i - ii)
                    for jj in range(j + 1):
                        term = xi * _binomial(j, jj) * p.y ** (j - jj)
                        key = (ii, jj)
                        new_tables[comp][key] = new_tables[comp].get(key, C(0)) + term
        if recenter:
            new_tables[0][(0, 0)] = new_tables[0].get((0, 0), C(0)) - p.x
            new_tables[1][(0, 0)] = new_tables[1].get((0, 0), C(0)) - p.y
        return PolyMap2(self.degree, new_tables[0], new_tables[1])


def iterate_with_derivative(f: PolyMap2, z: Vec2, n: int) -> Tuple[List[Vec2], Mat2]:
    """Orbit z, F(z), ..., F^n(z) and the chain-rule product of Jacobians."""
    if n < 1:
        raise ValueError("n must be >= 1")
    bound = R(2) ** ESCAPE_BOUND_LOG2
    orbit = [z]
    deriv = Mat2.identity()
    cur = z
    for k in range(n):
        if cur.norm() > bound:
            raise Overflow("orbit escaped at step %d" % k, k)
        deriv = f.jacobian(cur) * deriv
        cur = f.eval(cur)
        orbit.append(cur)
    if cur.norm() > bound:
        raise Overflow("orbit escaped at step %d" % n, n)
    return orbit, deriv


# ---------------------------------------------------------------------------
# parameter families

class ParamPoly:
    """Polynomial in the parameters (t, a, tau_1..tau_T)."""

    def __init__(self, tau_dim: int, table: Dict[ParamKey, mpc]):
        self.tau_dim = tau_dim
        self.table = {k: C(v) for k, v in table.items() if v != 0}
        for key in self.table:
            if len(key) != 2 + tau_dim:
                raise ValueError("parameter exponent tuple of wrong length")

    def eval(self, t: mpc, a: mpc, tau: Sequence[mpc]) -> mpc:
        acc = C(0)
        for key, val in self.table.items():
            term = val
            if key[0]:
                term = term * t ** key[0]
            if key[1]:
                term = term * a ** key[1]
            for d in range(self.tau_dim):
                if key[2 + d]:
                    term = term * C(tau[d]) ** key[2 + d]
            acc += term
        return acc

    def partial(self, which: int) -> "ParamPoly":
        out: Dict[ParamKey, mpc] = {}
        for key, val in self.table.items():
            e = key[which]
            if e > 0:
                nk = key[:which] + (e - 1,) + key[which + 1:]
                out[nk] = out.get(nk, C(0)) + e * val
        return ParamPoly(self.tau_dim, out)


class PolyFamily:
    """Family (t, a, tau) -> PolyMap2 with polynomial parameter dependence."""

    def __init__(self, degree: int, tau_dim: int,
                 coeffs_x: Dict[MonKey, ParamPoly],
                 coeffs_y: Dict[MonKey, ParamPoly],
                 r: mpfr = None, r0: mpfr = None):
        self.degree = degree
        self.tau_dim = tau_dim
        self.coeffs = (dict(coeffs_x), dict(coeffs_y))
        self.r = R(r) if r is not None else R(1)
        self.r0 = R(r0) if r0 is not None else self.r / 2
        if not self.r0 < self.r:
            raise ValueError("family requires r0 < r")

    def specialize(self, t, a, tau: Sequence = ()) -> PolyMap2:
        t, a = C(t), C(a)
        tau = tuple(C(v) for v in tau)
        if len(tau) != self.tau_dim:
            raise ValueError("expected %d tau components" % self.tau_dim)
        tables: List[Dict[MonKey, mpc]] = [{}, {}]
        for comp in (0, 1):
            for key, poly in self.coeffs[comp].items():
                tables[comp][key] = poly.eval(t, a, tau)
        return PolyMap2(self.degree, tables[0], tables[1])

    def param_partial(self, which: int) -> "PolyFamily":
        """Formal derivative family: 0 = t, 1 = a, 2+d = tau_{d+1}."""
        out: List[Dict[MonKey, ParamPoly]] = [{}, {}]
        for comp in (0, 1):
            for key, poly in self.coeffs[comp].items():
                out[comp][key] = poly.partial(which)
        fam = PolyFamily.__new__(PolyFamily)
        fam.degree = self.degree
        fam.tau_dim = self.tau_dim
        fam.coeffs = (out[0], out[1])
        fam.r = self.r
        fam.r0 = self.r0
        return fam


def henon_family(a_center="2", b_center="0.05", tau_dim: int = 1,
                 r="0.5", r0="0.35") -> PolyFamily:
    """Built-in quadratic test family.

    F_{t,a,tau}(x, y) = (A(a) - x^2 - B(t) y + tau_1 x y, x) with
    A(a) = a_center + a and B(t) = b_center + t.  At tau = 0 this is the
    Henon family; the x*y coupling is a generic degree-2 tau-direction.
    """
    if tau_dim < 0:
        raise ValueError("tau_dim must be >= 0")
    zeros = (0,) * tau_dim

    def pk(et, ea, d=None):
        key = [et, ea] + [0] * tau_dim
        if d is not None:
            key[2 + d] = 1
        return tuple(key)

    cx: Dict[MonKey, ParamPoly] = {
        (0, 0): ParamPoly(tau_dim, {pk(0, 0): C(a_center), pk(0, 1): C(1)}),
        (2, 0): ParamPoly(tau_dim, {pk(0, 0): C(-1)}),
        (0, 1): ParamPoly(tau_dim, {pk(0, 0): -C(b_center), pk(1, 0): C(-1)}),
    }
    if tau_dim >= 1:
        cx[(1, 1)] = ParamPoly(tau_dim, {pk(0, 0, 0): C(1)})
    cy: Dict[MonKey, ParamPoly] = {
        (1, 0): ParamPoly(tau_dim, {pk(0, 0): C(1)}),
    }
    return PolyFamily(2, tau_dim, cx, cy, r=R(r), r0=R(r0))


# ---------------------------------------------------------------------------
# family definition files

def _format_param_poly(poly: ParamPoly) -> str:
    if not poly.table:
        return "0"
    parts = []
    for key in sorted(poly.table):
        val = poly.table[key]
        tok = [fmt(val).replace(", ", ",")]
        names = ["t", "a"] + ["tau%d" % (d + 1) for d in range(poly.tau_dim)]
        for name, e in zip(names, key):
            if e == 1:
                tok.append(name)
            elif e > 1:
                tok.append("%s^%d" % (name, e))
        parts.append(" ".join(tok))
    return " + ".join(parts)


def write_family(fam: PolyFamily, path: str) -> None:
    lines = [
        "degree = %d" % fam.degree,
        "tau_dim = %d" % fam.tau_dim,
        "r = %s" % fmt(fam.r),
        "r0 = %s" % fmt(fam.r0),
    ]
    for comp, name in ((0, "x"), (1, "y")):
        lines.append("[%s]" % name)
        for key in sorted(fam.coeffs[comp]):
            poly = fam.coeffs[comp][key]
            if not poly.table:
                continue
            lines.append("coef x^%d y^%d : %s" % (key[0], key[1],
                                                  _format_param_poly(poly)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class FamilyParseError(ToolkitError):
    def __init__(self, msg: str, line_no: int = 0):
        super().__init__("line %d: %s" % (line_no, msg))
        self.line_no = line_no


def _parse_param_term(tokens: List[str], tau_dim: int, line_no: int) -> Tuple[ParamKey, mpc]:
    try:
        val = parse_complex(tokens[0])
    except Exception:
        raise FamilyParseError("bad coefficient %r" % tokens[0], line_no)
    key = [0, 0] + [0] * tau_dim
    names = {"t": 0, "a": 1}
    names.update(("tau%d" % (d + 1), 2 + d) for d in range(tau_dim))
    for tok in tokens[1:]:
        if "^" in tok:
            name, _, estr = tok.partition("^")
            try:
                e = int(estr)
            except ValueError:
                raise FamilyParseError("bad exponent %r" % tok, line_no)
        else:
            name, e = tok, 1
        if name not in names:
            raise FamilyParseError("unknown parameter %r" % name, line_no)
        key[names[name]] += e
    return tuple(key), val


def read_family(path: str) -> PolyFamily:
    """Parse a family definition file (see write_family for the format)."""
    header: Dict[str, str] = {}
    sections: Dict[str, Dict[MonKey, ParamPoly]] = {"x": {}, "y": {}}
    current: Optional[str] = None
    tau_dim: Optional[int] = None
    with open(path) as fh:
        raw_lines = fh.readlines()
    for line_no, raw in enumerate(raw_lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise FamilyParseError("unknown section %r" % name, line_no)
            current = name
            continue
        if current is None:
            if "=" not in line:
                raise FamilyParseError("expected key = value", line_no)
            key, _, val = line.partition("=")
            header[key.strip()] = val.strip()
            continue
        if not line.startswith("coef"):
            raise FamilyParseError("expected a coef entry", line_no)
        head, _, body = line.partition(":")
        toks = head.split()
        if len(toks) != 3 or not toks[1].startswith("x^") or not toks[2].startswith("y^"):
            raise FamilyParseError("malformed monomial %r" % head.strip(), line_no)
        try:
            mon = (int(toks[1][2:]), int(toks[2][2:]))
        except ValueError:
            raise FamilyParseError("malformed monomial %r" % head.strip(), line_no)
        if tau_dim is None:
            try:
                tau_dim = int(header["tau_dim"])
            except KeyError:
                raise FamilyParseError("tau_dim must precede coef entries", line_no)
        table: Dict[ParamKey, mpc] = {}
        for term in body.split("+"):
            term = term.strip()
            if not term or term == "0":
                continue
            key, val = _parse_param_term(term.split(), tau_dim, line_no)
            table[key] = table.get(key, C(0)) + val
        sections[current][mon] = ParamPoly(tau_dim, table)
    try:
        degree = int(header["degree"])
        tau_dim = int(header["tau_dim"])
    except (KeyError, ValueError):
        raise FamilyParseError("degree and tau_dim headers are required", 0)
    r = R(header["r"]) if "r" in header else R(1)
    r0 = R(header["r0"]) if "r0" in header else r / 2
    return PolyFamily(degree, tau_dim, sections["x"], sections["y"], r=r, r0=r0)


# ---------------------------------------------------------------------------
# family validation: (F2) and (F3)

@dataclass(frozen=True)
class FamilyGrid:
    t_min: mpfr
    t_max: mpfr
    nt: int
    a_min: mpfr
    a_max: mpfr
    na: int
    saddle_seed: Vec2

    def t_values(self):
        if self.nt == 1:
            return [R(self.t_min)]
        step = (R(self.t_max) - R(self.t_min)) / (self.nt - 1)
        return [R(self.t_min) + k * step for k in range(self.nt)]

    def a_values(self):
        if self.na == 1:
            return [R(self.a_min)]
        step = (R(self.a_max) - R(self.a_min)) / (self.na - 1)
        return [R(self.a_min) + k * step for k in range(self.na)]


@dataclass(frozen=True)
class FamilyValidation:
    lambda_max: mpfr
    mu_max: mpfr
    min_dmu_dt: mpfr
    dissipation_product: mpfr  # lambda_max * mu_max^3
    f2_pass: bool
    f3_pass: bool


def validate_family(fam: PolyFamily, grid: FamilyGrid,
                    tau: Sequence = None, dmu_floor="1e-8") -> FamilyValidation:
    """Check (F2): d mu/dt != 0 and (F3): lambda_max mu_max^3 < 1 on a grid.

    The saddle is continued across the grid; eigenvalue t-derivatives are
    central finite differences at a precision-scaled step.
    """
    from . import saddle as saddle_mod

    if tau is None:
        tau = (0,) * fam.tau_dim
    lam_max = R(0)
    mu_max = R(0)
    min_dmu = None
    h = max(abs(R(grid.t_max) - R(grid.t_min)), R("1e-3")) * R(2) ** (-53)
    seed = grid.saddle_seed
    for tval in grid.t_values():
        row_seed = None
        for aval in grid.a_values():
            use_seed = row_seed if row_seed is not None else seed
            try:
                rec = saddle_mod.find_saddle(fam.specialize(tval, aval, tau), use_seed)
                rp = saddle_mod.find_saddle(fam.specialize(tval + h, aval, tau), rec.point)
                rm = saddle_mod.find_saddle(fam.specialize(tval - h, aval, tau), rec.point)
            except ToolkitError as exc:
                raise SaddleLost("saddle lost at t=%s a=%s: %s"
                                 % (fmt(R(tval)), fmt(R(aval)), exc)) from exc
            if row_seed is None:
                seed = rec.point
            row_seed = rec.point
            lam_max = max(lam_max, abs(rec.lam))
            mu_max = max(mu_max, abs(rec.mu))
            dmu = abs(rp.mu - rm.mu) / (2 * h)
            min_dmu = dmu if min_dmu is None else min(min_dmu, dmu)
    product = lam_max * mu_max ** 3
    return FamilyValidation(
        lambda_max=lam_max,
        mu_max=mu_max,
        min_dmu_dt=min_dmu,
        dissipation_product=product,
        f2_pass=bool(min_dmu > R(dmu_floor)),
        f3_pass=bool(product < 1),
    )
