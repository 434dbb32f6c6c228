"""Saddle points, non-resonance certificates, semi-linearization charts.

The chart straightens both local invariant manifolds: it is assembled from
the two linearizing manifold parametrizations gamma_s, gamma_u (solved
order by order from F(gamma(s)) = gamma(eta s)), so that in chart
coordinates the map fixes both axes and acts linearly on them up to the
truncation order.  Off-axis the map is unconstrained, which is exactly the
semi-linearization contract.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import gmpy2
from gmpy2 import mpc, mpfr

from .maps import PolyMap2
from .numerics import (
    C,
    Mat2,
    NewtonConfig,
    NoConvergence,
    R,
    ToolkitError,
    Vec2,
    eig2,
    eps_root,
    get_precision,
    newton_solve,
)
from .series import Curve1, PowerTable2, Series1, Series2, compose_pair, invert_pair


class NotASaddle(ToolkitError):
    pass


class ResonanceDetected(ToolkitError):
    pass


class SmallDivisor(ToolkitError):
    pass


class RadiusTooLarge(ToolkitError):
    pass


class ChartInversionError(ToolkitError):
    pass


# ---------------------------------------------------------------------------
# saddles

@dataclass(frozen=True)
class SaddleRecord:
    point: Vec2
    lam: mpc           # stable eigenvalue, |lam| < 1
    mu: mpc            # unstable eigenvalue, |mu| > 1
    e_stable: Vec2
    e_unstable: Vec2
    residual: mpfr
    dissipation: mpfr  # |lam| * |mu|^3
    jacobian: Mat2


def _eigenvector(m: Mat2, eta: mpc) -> Vec2:
    v1 = Vec2(m.m12, eta - m.m11)
    v2 = Vec2(eta - m.m22, m.m21)
    v = v1 if v1.norm() >= v2.norm() else v2
    if v.norm() == 0:
        # diagonal matrix: eigenvector is a coordinate axis
        v = Vec2(C(1), C(0)) if abs(m.m11 - eta) <= abs(m.m22 - eta) else Vec2(C(0), C(1))
    # deterministic normalization: sup norm 1, dominant component real > 0
    dom = v.x if abs(v.x) >= abs(v.y) else v.y
    return v.scale(abs(dom) / (dom * v.norm()))


def find_saddle(f: PolyMap2, seed: Vec2,
                cfg: NewtonConfig = NewtonConfig()) -> SaddleRecord:
    """Locate a fixed point near the seed and certify its saddle spectrum."""

    def fixed_point_eq(z):
        jac = f.jacobian(z)
        return f.eval(z) - z, jac - Mat2.identity()

    res = newton_solve(fixed_point_eq, seed, cfg)
    p = res.point
    jac = f.jacobian(p)
    mu, lam = eig2(jac)
    if not (abs(lam) < 1 < abs(mu)):
        raise NotASaddle(
            "eigenvalue moduli %s, %s do not straddle 1"
            % (format(abs(mu), ".6g"), format(abs(lam), ".6g")))
    return SaddleRecord(
        point=p,
        lam=lam,
        mu=mu,
        e_stable=_eigenvector(jac, lam),
        e_unstable=_eigenvector(jac, mu),
        residual=res.residual,
        dissipation=abs(lam) * abs(mu) ** 3,
        jacobian=jac,
    )


@dataclass(frozen=True)
class NonResonanceCert:
    order: int
    delta: mpfr  # min gap over the Sternberg inequalities up to the order


def check_nonresonance(lam: mpc, mu: mpc, n_check: int = 20) -> NonResonanceCert:
    """Standard Sternberg condition lam != lam^k1 mu^k2, mu != lam^k1 mu^k2.

    Enumerates all k1 + k2 from 2 to n_check.  This is strictly stronger
    than requiring only lam != mu^k1 and mu != lam^k2, which holds
    automatically for modulus-separated eigenvalues; the chart recursion's
    divisors are exactly the standard ones.
    """
    if not (abs(lam) < 1 < abs(mu)):
        raise NotASaddle("check_nonresonance requires |lam| < 1 < |mu|")
    lam_pows = [C(1)]
    mu_pows = [C(1)]
    for _ in range(n_check):
        lam_pows.append(lam_pows[-1] * lam)
        mu_pows.append(mu_pows[-1] * mu)
    delta = None
    for total in range(2, n_check + 1):
        for k1 in range(total + 1):
            k2 = total - k1
            prod = lam_pows[k1] * mu_pows[k2]
            for target in (lam, mu):
                gap = abs(target - prod)
                if delta is None or gap < delta:
                    delta = gap
    if delta <= eps_root():
        raise ResonanceDetected("resonance gap %s at order %d"
                                % (format(delta, ".3g"), n_check))
    return NonResonanceCert(order=n_check, delta=delta)


# ---------------------------------------------------------------------------
# linearizing manifold parametrizations

@dataclass(frozen=True)
class ManifoldCurve:
    which: str          # "stable" | "unstable"
    eigenvalue: mpc
    curve: Curve1       # gamma with gamma(0) = p, gamma'(0) = eigenvector
    order: int


def parametrize_manifold(f: PolyMap2, s: SaddleRecord, which: str,
                         order: int = 12) -> ManifoldCurve:
    """Power-series curve gamma with F(gamma(s)) = gamma(eta s) to the order.

    eta is the stable or unstable eigenvalue.  Each order solves a 2x2
    homological system whose divisors are lam - eta^k and mu - eta^k; a
    divisor below 2^{-p/2} aborts with SmallDivisor.
    """
    if which not in ("stable", "unstable"):
        raise ValueError("which must be 'stable' or 'unstable'")
    eta = s.lam if which == "stable" else s.mu
    evec = s.e_stable if which == "stable" else s.e_unstable
    p = s.point
    shifted = f.shifted(p, recenter=True)
    jac = s.jacobian
    floor = eps_root()

    # delta = gamma - p as coefficient lists.  Monomial products delta_x^i
    # delta_y^j are filled order by order; every factor has zero constant
    # term, so the order-k coefficient of a degree >= 2 product only uses
    # delta-orders below k.
    dx = [C(0), evec.x] + [C(0)] * (order - 1)
    dy = [C(0), evec.y] + [C(0)] * (order - 1)
    needed = sorted({key for comp in (0, 1) for key in shifted.coeffs[comp]
                     if key[0] + key[1] >= 2})
    closure = set()
    for key in needed:
        i, j = key
        while (i, j) not in ((1, 0), (0, 1)):
            closure.add((i, j))
            if i >= 1:
                i -= 1
            else:
                j -= 1
    chain = sorted(closure, key=lambda ij: (ij[0] + ij[1], ij[0]))
    prods: Dict[Tuple[int, int], List[mpc]] = {(1, 0): dx, (0, 1): dy}
    for key in chain:
        prods[key] = [C(0)] * (order + 1)

    def fill_order(k: int) -> None:
        for key in chain:
            i, j = key
            if i + j > k:
                continue
            if i >= 2 or (i == 1 and j >= 1):
                base, fac = prods[(i - 1, j)], dx
            else:
                base, fac = prods[(i, j - 1)], dy
            acc = C(0)
            for m in range(i + j - 1, k):
                bm = base[m]
                if bm != 0:
                    acc += bm * fac[k - m]
            prods[key][k] = acc

    eta_pow = eta
    for k in range(2, order + 1):
        eta_pow = eta_pow * eta
        fill_order(k)
        nk = [C(0), C(0)]
        for comp in (0, 1):
            for key, val in shifted.coeffs[comp].items():
                if key[0] + key[1] >= 2:
                    nk[comp] += val * prods[key][k]
        d1 = s.lam - eta_pow
        d2 = s.mu - eta_pow
        if min(abs(d1), abs(d2)) <= floor:
            raise SmallDivisor(
                "divisor %s at order %d of the %s manifold"
                % (format(min(abs(d1), abs(d2)), ".3g"), k, which))
        system = jac - Mat2.diag(eta_pow, eta_pow)
        ck = system.solve(Vec2(-nk[0], -nk[1]))
        dx[k] = ck.x
        dy[k] = ck.y
    curve = Curve1(Series1([p.x] + dx[1:]), Series1([p.y] + dy[1:]))
    return ManifoldCurve(which=which, eigenvalue=eta, curve=curve, order=order)


def manifold_residual(f: PolyMap2, mc: ManifoldCurve, radius,
                      samples: int = 32) -> mpfr:
    """max over |s| = radius of ||F(gamma(s)) - gamma(eta s)|| (sup norm)."""
    worst = R(0)
    radius = R(radius)
    for k in range(samples):
        ang = 2 * gmpy2.const_pi() * k / samples
        sigma = radius * C(gmpy2.cos(ang), gmpy2.sin(ang))
        err = (f.eval(mc.curve.eval(sigma))
               - mc.curve.eval(mc.eigenvalue * sigma)).norm()
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# semi-linearization chart

@dataclass(frozen=True)
class SemiLinChart:
    saddle: SaddleRecord
    order: int
    rho: mpfr                     # certified common axis radius
    stable: Curve1                # gamma_s, constant term = p
    unstable: Curve1              # gamma_u
    inverse: Optional[Tuple[Series2, Series2]]  # truncated inverse in z - p
    residual_stable: Optional[mpfr]
    residual_unstable: Optional[mpfr]
    cres: mpfr                    # contract constant: residual <= cres * rho^{M+1}

    @property
    def lam(self) -> mpc:
        return self.saddle.lam

    @property
    def mu(self) -> mpc:
        return self.saddle.mu

    @property
    def point(self) -> Vec2:
        return self.saddle.point

    def linear_frame(self) -> Mat2:
        ds = self.stable.coefficient(1)
        du = self.unstable.coefficient(1)
        return Mat2(ds.x, du.x, ds.y, du.y)


def from_chart(chart: SemiLinChart, w: Vec2) -> Vec2:
    gs = chart.stable.eval(w.x)
    gu = chart.unstable.eval(w.y)
    return Vec2(gs.x + gu.x - chart.point.x, gs.y + gu.y - chart.point.y)


def chart_jacobian(chart: SemiLinChart, w: Vec2) -> Mat2:
    _, ds = chart.stable.eval_with_derivative(w.x)
    _, du = chart.unstable.eval_with_derivative(w.y)
    return Mat2(ds.x, du.x, ds.y, du.y)


def to_chart(chart: SemiLinChart, z: Vec2, seed: Optional[Vec2] = None,
             max_iters: int = 40) -> Vec2:
    """Chart coordinates of a phase point: Newton inversion of the chart map.

    Seeded from the truncated inverse series when present, else from the
    linear frame.  Converges quadratically inside the chart domain; a stall
    at rounding level is accepted once the residual is far below every
    certificate tolerance.
    """
    dz = z - chart.point
    if seed is not None:
        w = seed
    elif chart.inverse is not None:
        w = Vec2(chart.inverse[0].eval(dz.x, dz.y),
                 chart.inverse[1].eval(dz.x, dz.y))
    else:
        w = chart.linear_frame().solve(dz)
    scale = max(R(1), dz.norm())
    tol = scale * R(2) ** (-(get_precision() - 10))
    loose = scale * R(2) ** (-(3 * get_precision()) // 4)
    prev = None
    for _ in range(max_iters):
        err = (from_chart(chart, w) - z)
        err_norm = err.norm()
        if err_norm <= tol:
            return w
        if prev is not None and err_norm > prev / 4:
            if err_norm <= loose:
                return w
            raise ChartInversionError("chart inversion stalled (residual %s)"
                                      % format(err_norm, ".3g"))
        prev = err_norm
        jac = chart_jacobian(chart, w)
        if jac.det() == 0:
            raise ChartInversionError("chart Jacobian singular during inversion")
        w = w - jac.solve(err)
    err_norm = (from_chart(chart, w) - z).norm()
    if err_norm <= loose:
        return w
    raise ChartInversionError("chart inversion did not converge (residual %s)"
                              % format(err_norm, ".3g"))


def chart_second_directional(chart: SemiLinChart, w: Vec2, h: Vec2) -> Vec2:
    """D^2 Phi(w)(h, h); only the pure axis curvatures enter, because the
    chart is a sum of one-variable curves."""
    _, _, dds = chart.stable.eval_jet(w.x)
    _, _, ddu = chart.unstable.eval_jet(w.y)
    hx2 = h.x * h.x
    hy2 = h.y * h.y
    return Vec2(dds.x * hx2 + ddu.x * hy2, dds.y * hx2 + ddu.y * hy2)


def to_chart_jet(chart: SemiLinChart, z: Vec2, d1: Vec2, d2: Vec2,
                 seed: Optional[Vec2] = None) -> Tuple[Vec2, Vec2, Vec2]:
    """Jets of to_chart along a curve with value z, derivatives d1, d2.

    Uses the inverse-function rule: for g = Phi^{-1},
    (g o zeta)'' = Dg zeta'' - Dg D^2Phi(Dg zeta', Dg zeta').
    """
    w = to_chart(chart, z, seed=seed)
    dginv = chart_jacobian(chart, w).inverse()
    g1 = dginv.apply(d1)
    curv = chart_second_directional(chart, w, g1)
    g2 = dginv.apply(d2 - curv)
    return w, g1, g2


def axis_residual(chart: SemiLinChart, f: PolyMap2, radius,
                  samples: int = 64) -> Tuple[mpfr, mpfr]:
    """Conjugacy residuals on the two axis circles |s| = radius.

    Measures || to_chart(F(from_chart(s, 0))) - (lam s, 0) || and the
    unstable counterpart, in chart coordinates.
    """
    radius = R(radius)
    worst_s = R(0)
    worst_u = R(0)
    for k in range(samples):
        ang = 2 * gmpy2.const_pi() * k / samples
        sigma = radius * C(gmpy2.cos(ang), gmpy2.sin(ang))
        ws = to_chart(chart, f.eval(from_chart(chart, Vec2(sigma, C(0)))),
                      seed=Vec2(chart.lam * sigma, C(0)))
        worst_s = max(worst_s, (ws - Vec2(chart.lam * sigma, C(0))).norm())
        wu = to_chart(chart, f.eval(from_chart(chart, Vec2(C(0), sigma))),
                      seed=Vec2(C(0), chart.mu * sigma))
        worst_u = max(worst_u, (wu - Vec2(C(0), chart.mu * sigma)).norm())
    return worst_s, worst_u


def build_chart(f: PolyMap2, s: SaddleRecord, order: int = 12,
                rho=None, cres="1.0", max_residual=None,
                samples: int = 64, full: bool = True,
                rho_min="0.0009765625") -> SemiLinChart:
    """Construct the finite-order semi-linearization chart.

    With rho=None the radius is chosen adaptively: the largest dyadic
    rho <= 0.5 whose sampled axis-conjugacy residual meets the contract
    residual <= cres * rho^{order+1} (and max_residual, when given).
    Raises RadiusTooLarge if an explicitly requested rho fails the
    contract, SmallDivisor from the homological solves.
    """
    check_nonresonance(s.lam, s.mu, max(order, 2))
    gs = parametrize_manifold(f, s, "stable", order)
    gu = parametrize_manifold(f, s, "unstable", order)
    cres = R(cres)

    inverse = None
    if full:
        ax = Series2(order)
        ay = Series2(order)
        for k in range(1, order + 1):
            cs = gs.curve.coefficient(k)
            cu = gu.curve.coefficient(k)
            if cs.x != 0:
                ax.c[(k, 0)] = cs.x
            if cu.x != 0:
                ax.c[(0, k)] = ax.c.get((0, k), C(0)) + cu.x
            if cs.y != 0:
                ay.c[(k, 0)] = cs.y
            if cu.y != 0:
                ay.c[(0, k)] = ay.c.get((0, k), C(0)) + cu.y
        inverse = invert_pair(ax, ay)

    chart = SemiLinChart(
        saddle=s, order=order, rho=R(rho) if rho is not None else R("0.5"),
        stable=gs.curve, unstable=gu.curve, inverse=inverse,
        residual_stable=None, residual_unstable=None, cres=cres,
    )
    if not full:
        return chart

    def contract_ok(radius, rs, ru):
        budget = cres * R(radius) ** (order + 1)
        if max_residual is not None:
            budget = min(budget, R(max_residual))
        return max(rs, ru) <= budget

    if rho is not None:
        rs, ru = axis_residual(chart, f, rho, samples)
        if not contract_ok(rho, rs, ru):
            raise RadiusTooLarge(
                "axis residual %s exceeds contract at rho=%s"
                % (format(max(rs, ru), ".3g"), format(R(rho), ".3g")))
        return replace(chart, rho=R(rho), residual_stable=rs, residual_unstable=ru)

    radius = R("0.5")
    while radius >= R(rho_min):
        rs, ru = axis_residual(chart, f, radius, samples)
        if contract_ok(radius, rs, ru):
            return replace(chart, rho=radius, residual_stable=rs,
                           residual_unstable=ru)
        radius = radius / 2
    raise RadiusTooLarge("no dyadic radius >= %s meets the residual contract"
                         % rho_min)


def rescale_chart(chart: SemiLinChart, su, sv) -> SemiLinChart:
    """Diagonal chart rescale (u, v) -> (su*u, sv*v); axes stay straightened.

    Residual certificates are dropped (radii change meaning); callers
    re-certify where needed.
    """
    su, sv = C(su), C(sv)
    inverse = None
    if chart.inverse is not None:
        inverse = (chart.inverse[0].scale(1 / su), chart.inverse[1].scale(1 / sv))
    return replace(
        chart,
        stable=chart.stable.rescale_parameter(su),
        unstable=chart.unstable.rescale_parameter(sv),
        inverse=inverse,
        rho=chart.rho / max(abs(su), abs(sv)),
        residual_stable=None,
        residual_unstable=None,
    )


def conjugated_map(chart: SemiLinChart, f: PolyMap2) -> Tuple[Series2, Series2]:
    """Chart representation G = Phi^{-1} o F o Phi as a truncated series pair.

    Used by the chart-contract checks; pointwise work goes through
    to_chart/from_chart instead.
    """
    if chart.inverse is None:
        raise ValueError("conjugated_map needs a fully built chart")
    order = chart.order
    p = chart.point
    ax = Series2(order)
    ay = Series2(order)
    for k in range(1, order + 1):
        cs = chart.stable.coefficient(k)
        cu = chart.unstable.coefficient(k)
        if cs.x != 0:
            ax.c[(k, 0)] = cs.x
        if cu.x != 0:
            ax.c[(0, k)] = ax.c.get((0, k), C(0)) + cu.x
        if cs.y != 0:
            ay.c[(k, 0)] = cs.y
        if cu.y != 0:
            ay.c[(0, k)] = ay.c.get((0, k), C(0)) + cu.y
    shifted = f.shifted(p, recenter=True)
    table = PowerTable2(ax, ay, order)
    wx = Series2(order)
    wy = Series2(order)
    for comp, target in ((0, "wx"), (1, "wy")):
        acc = Series2(order)
        for key, val in shifted.coeffs[comp].items():
            acc = acc + table.power(key[0], key[1]).scale(val)
        if comp == 0:
            wx = acc
        else:
            wy = acc
    # drop the fixed-point defect (F(p) - p, at Newton-residual scale)
    wx.c.pop((0, 0), None)
    wy.c.pop((0, 0), None)
    gx = compose_pair(chart.inverse[0], wx, wy)
    gy = compose_pair(chart.inverse[1], wx, wy)
    return gx, gy


def eq4_entry_ratios(chart: SemiLinChart, f: PolyMap2, radius,
                     samples_per_ring: int = 16, rings: int = 4):
    """Samples of the chart-Jacobian structure bounds.

    At chart points (x, y), DG should be [[lam + O(y), O(x)], [O(y),
    mu + O(x)]].  Returns a list of (radius, max_ratio) rows where the
    ratio divides each entry deviation by the controlling coordinate.
    """
    rows = []
    radius = R(radius)
    for ring in range(rings):
        rad = radius / R(2) ** ring
        worst = R(0)
        for k in range(samples_per_ring):
            ang = 2 * gmpy2.const_pi() * (k + (ring % 2) / 2) / samples_per_ring
            x = rad * C(gmpy2.cos(ang), gmpy2.sin(ang))
            y = rad * C(gmpy2.cos(ang * 3 + 1), gmpy2.sin(ang * 3 + 1))
            w = Vec2(x, y)
            z = from_chart(chart, w)
            gz = f.eval(z)
            gw = to_chart(chart, gz)
            dphi_w = chart_jacobian(chart, w)
            dphi_gw = chart_jacobian(chart, gw)
            dg = dphi_gw.inverse() * f.jacobian(z) * dphi_w
            ratios = [
                abs(dg.m11 - chart.lam) / abs(y),
                abs(dg.m12) / abs(x),
                abs(dg.m21) / abs(y),
                abs(dg.m22 - chart.mu) / abs(x),
            ]
            worst = max(worst, max(ratios))
        rows.append((rad, worst))
    return rows
