"""Global unstable-manifold arcs, homoclinic tangencies, unfolding frames.

The global unstable manifold is reached by pushing the linearizing
parametrization forward: W(sigma) = F^j(gamma_u(sigma)) with sigma in a
fundamental band, so arcs, crossings and tangencies are all computed on an
entire function of sigma with analytic jets.  A tangency is a double zero
of the chart y-coordinate of the excursion image; its unfolding frame
normalizes the chart so the primary critical point is (0, 1), the tangency
lands at (1, 0), and the reported vertical parameter equals the critical
value height.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import gmpy2
from gmpy2 import mpc, mpfr

from .maps import Overflow, PolyFamily, PolyMap2
from .numerics import (
    C,
    Mat2,
    NewtonConfig,
    NoConvergence,
    R,
    ToolkitError,
    Vec2,
    eps_root,
    get_precision,
)
from .saddle import (
    SaddleRecord,
    SemiLinChart,
    build_chart,
    chart_jacobian,
    ChartInversionError,
    find_saddle,
    from_chart,
    rescale_chart,
    to_chart,
    to_chart_jet,
)


class BudgetExceeded(ToolkitError):
    pass


class NoCrossing(ToolkitError):
    pass


class TangentialOnly(ToolkitError):
    pass


class DegenerateTangency(ToolkitError):
    pass


class QViolated(ToolkitError):
    pass


class P2Violated(ToolkitError):
    pass


# ---------------------------------------------------------------------------
# jets through iterated maps

def orbit_jet(f: PolyMap2, z: Vec2, d1: Vec2, d2: Vec2,
              n: int, escape=None) -> Tuple[Vec2, Vec2, Vec2, List[Vec2]]:
    """Propagate (value, first, second derivative) jets through n steps.

    Returns the final jets and the full orbit (n+1 points).
    """
    bound = R(escape) if escape is not None else R(2) ** 64
    orbit = [z]
    for k in range(n):
        if z.norm() > bound:
            raise Overflow("jet orbit escaped at step %d" % k, k)
        jac = f.jacobian(z)
        d2 = jac.apply(d2) + f.second_directional(z, d1, d1)
        d1 = jac.apply(d1)
        z = f.eval(z)
        orbit.append(z)
    return z, d1, d2, orbit


# ---------------------------------------------------------------------------
# manifold arcs

@dataclass(frozen=True)
class ArcSample:
    sigma: mpfr             # manifold parameter in the fundamental band
    phase: Vec2
    chart: Optional[Vec2]   # None where clipped (escaped / outside window)


@dataclass(frozen=True)
class ManifoldArc:
    which: str
    steps: int
    sigma_lo: mpfr
    sigma_hi: mpfr
    tol: mpfr
    samples: Tuple[ArcSample, ...]

    def chart_length(self) -> mpfr:
        total = R(0)
        prev = None
        for s in self.samples:
            if s.chart is not None and prev is not None:
                total += (s.chart - prev).norm()
            prev = s.chart
        return total


def _arc_point(chart: SemiLinChart, f: PolyMap2, curve, sigma, steps: int,
               clip_x, clip_y, escape) -> ArcSample:
    z = curve.eval(sigma)
    for k in range(steps):
        if z.norm() > escape:
            return ArcSample(sigma, z, None)
        z = f.eval(z)
    w = None
    if z.norm() <= escape:
        try:
            cand = to_chart(chart, z, max_iters=40)
            if abs(cand.x) <= clip_x and abs(cand.y) <= clip_y:
                w = cand
        except ChartInversionError:
            w = None
    return ArcSample(sigma, z, w)


def grow_manifold(chart: SemiLinChart, f: PolyMap2, which: str, steps: int,
                  tol, sigma_lo=None, sigma_hi=None, initial: int = 33,
                  budget: int = 4000, clip_x=None, clip_y=None) -> ManifoldArc:
    """Image of a fundamental band of the local manifold after `steps` maps.

    Samples are inserted between chart-visible neighbours until the sagitta
    (midpoint deviation from the chord, chart metric) drops below tol.
    Points that escape or leave the clip window carry chart=None.  The clip
    window is wide along the stable axis (the stable parametrization stays
    accurate far out) and moderate in the unstable coordinate.
    """
    if which not in ("stable", "unstable"):
        raise ValueError("which must be 'stable' or 'unstable'")
    if which == "stable":
        raise ValueError("stable arcs are grown through the inverse map; "
                         "not needed for tangency detection")
    curve = chart.unstable
    eta = chart.mu
    band_hi = R(sigma_hi) if sigma_hi is not None else R("0.8") * chart.rho
    band_lo = R(sigma_lo) if sigma_lo is not None else band_hi / abs(eta)
    if not 0 < band_lo < band_hi:
        raise ValueError("fundamental band must satisfy 0 < lo < hi")
    tol = R(tol)
    clip_x = R(clip_x) if clip_x is not None else 24 * max(chart.rho, R("0.5"))
    clip_y = R(clip_y) if clip_y is not None else 8 * max(chart.rho, R("0.5"))
    escape = R(2) ** 64

    sigmas = [band_lo + (band_hi - band_lo) * k / (initial - 1)
              for k in range(initial)]
    samples = [_arc_point(chart, f, curve, s, steps, clip_x, clip_y, escape)
               for s in sigmas]
    # adaptive refinement
    changed = True
    while changed:
        changed = False
        out: List[ArcSample] = []
        for left, right in zip(samples, samples[1:]):
            out.append(left)
            if left.chart is None or right.chart is None:
                continue
            mid_sigma = (left.sigma + right.sigma) / 2
            mid = _arc_point(chart, f, curve, mid_sigma, steps, clip_x, clip_y, escape)
            if mid.chart is None:
                out.append(mid)
                changed = True
                continue
            chord_mid = (left.chart + right.chart).scale(R("0.5"))
            sag = (mid.chart - chord_mid).norm()
            if sag > tol:
                out.append(mid)
                changed = True
        out.append(samples[-1])
        samples = out
        if len(samples) > budget:
            raise BudgetExceeded("arc refinement exceeded %d samples" % budget)
    if all(s.chart is None and s.phase.norm() > escape for s in samples):
        raise Overflow("entire arc escaped")
    return ManifoldArc(which=which, steps=steps, sigma_lo=band_lo,
                       sigma_hi=band_hi, tol=tol, samples=tuple(samples))


# ---------------------------------------------------------------------------
# composite chart-y jets: the workhorse of crossing/tangency solves

def composite_y_jet(f: PolyMap2, chart: SemiLinChart, sigma, steps: int,
                    chart_out: Optional[SemiLinChart] = None):
    """Jets of sigma -> to_chart(F^steps(gamma_u(sigma))).

    Returns (w, dw, ddw, orbit): chart point and its first/second
    sigma-derivatives, plus the phase orbit.
    """
    chart_out = chart_out if chart_out is not None else chart
    z, d1, d2 = chart.unstable.eval_jet(sigma)
    z = Vec2(z.x, z.y)
    zf, v1, v2, orbit = orbit_jet(f, z, d1, d2, steps)
    w, g1, g2 = to_chart_jet(chart_out, zf, v1, v2)
    return w, g1, g2, orbit


@dataclass(frozen=True)
class CrossingRecord:
    sigma: mpfr
    steps: int
    point: Vec2        # chart coordinates, y ~ 0
    slope: mpc         # dY/dX along the arc at the crossing
    dy_dsigma: mpc


def find_transversal(arc: ManifoldArc, chart: SemiLinChart, f: PolyMap2,
                     angle_floor="1e-3", newton: NewtonConfig = NewtonConfig()
                     ) -> CrossingRecord:
    """Transversal crossing of the arc with the stable axis (chart y = 0).

    Scans the arc for sign changes of the chart y-coordinate, polishes each
    by Newton on sigma, and returns the steepest crossing.  Raises
    NoCrossing when no sign change exists, TangentialOnly when every
    crossing has |dY/dX| below the floor.
    """
    floor = R(angle_floor)
    candidates = []
    for left, right in zip(arc.samples, arc.samples[1:]):
        if left.chart is None or right.chart is None:
            continue
        ly, ry = left.chart.y.real, right.chart.y.real
        if ly == 0:
            candidates.append(left.sigma)
        elif ly * ry < 0:
            candidates.append((left.sigma + right.sigma) / 2)
    if not candidates:
        raise NoCrossing("arc does not cross the stable axis")

    results = []
    tol = newton.effective_tol()
    for seed in candidates:
        sigma = C(seed)
        ok = False
        for _ in range(newton.max_iters):
            w, g1, _, _ = composite_y_jet(f, chart, sigma, arc.steps)
            if abs(w.y) <= tol:
                ok = True
                break
            if g1.y == 0:
                break
            sigma = sigma - w.y / g1.y
        if not ok:
            continue
        slope = g1.y / g1.x if g1.x != 0 else gmpy2.inf()
        results.append(CrossingRecord(sigma=sigma, steps=arc.steps,
                                      point=w, slope=slope, dy_dsigma=g1.y))
    if not results:
        raise NoCrossing("crossing candidates failed to converge")
    above = [r for r in results if abs(r.slope) >= floor]
    if not above:
        raise TangentialOnly("all crossings have |slope| below %s"
                             % format(floor, ".3g"))
    return max(above, key=lambda r: (abs(r.slope), -r.sigma.real))


# ---------------------------------------------------------------------------
# tangency detection and certification

@dataclass(frozen=True)
class AccumulationWitness:
    center_sigma: mpfr
    distances: Tuple[mpfr, ...]   # sup distance to [p, q2]^u over trailing steps
    decreasing: bool


@dataclass(frozen=True)
class TangencyRecord:
    t: mpc
    a: mpc                    # raw family parameter of the tangency
    tau: Tuple[mpc, ...]
    steps: int                # N: q1 = F^N(q3)
    sigma: mpc                # v3: unstable-axis coordinate of q3 (raw chart)
    q1: Vec2                  # chart coordinates of the tangency point
    q2_sigma: mpc             # unstable-axis coordinate of q2
    q2_slope: mpc             # crossing slope certificate at F^{j2}(q2)
    q2_steps: int
    q_second: mpfr            # |d2Y/dsigma2| at the tangency (raw chart)
    residual_y: mpfr
    residual_dy: mpfr
    orientation: int          # sign of Re(mu)
    f8_gap: mpfr              # v3/|mu| <= |q2_sigma| margin (positive = holds)
    witness_q2: Optional[AccumulationWitness]
    witness_q1: Optional[AccumulationWitness]


def _fold_candidates(f: PolyMap2, chart: SemiLinChart, steps: int,
                     band_lo, band_hi, scan: int, y_cap, x_cap):
    """Coarse scan for local extrema of Y(sigma) near the stable axis."""
    vals = []
    for k in range(scan):
        sigma = band_lo + (band_hi - band_lo) * k / (scan - 1)
        try:
            w, g1, _, _ = composite_y_jet(f, chart, sigma, steps)
        except (Overflow, ChartInversionError):
            vals.append(None)
            continue
        if w.norm() > 8 * max(chart.rho, R(1)):
            vals.append(None)
            continue
        vals.append((sigma, w, g1))
    out = []
    for left, right in zip(vals, vals[1:]):
        if left is None or right is None:
            continue
        dl, dr = left[2].y.real, right[2].y.real
        if dl * dr < 0:
            sigma = (left[0] + right[0]) / 2
            w = left[1]
            if abs(w.y) <= y_cap and abs(w.x) <= x_cap:
                out.append((sigma, abs(w.y)))
    return out


def _tip_solve(f: PolyMap2, chart: SemiLinChart, steps: int, sigma_seed,
               max_iters: int = 60):
    """Newton on dY/dsigma = 0: the fold tip.  Returns (sigma, w, g2)."""
    sigma = C(sigma_seed)
    tol = R(2) ** (-(2 * get_precision()) // 3)
    for _ in range(max_iters):
        w, g1, g2, _ = composite_y_jet(f, chart, sigma, steps)
        if abs(g1.y) <= tol * max(R(1), abs(g2.y)):
            return sigma, w, g2
        if g2.y == 0:
            raise DegenerateTangency("flat fold: d2Y/dsigma2 = 0")
        sigma = sigma - g1.y / g2.y
    raise NoConvergence("fold tip Newton stalled")


@dataclass
class _SliceCtx:
    """Saddle/chart assembly at one parameter (t, a)."""
    f: PolyMap2
    saddle: SaddleRecord
    chart: SemiLinChart

    @staticmethod
    def build(family: PolyFamily, t, a, tau, seed: Vec2, order: int,
              newton: NewtonConfig = NewtonConfig()) -> "_SliceCtx":
        f = family.specialize(t, a, tau)
        sad = find_saddle(f, seed, newton)
        chart = build_chart(f, sad, order=order, full=False)
        return _SliceCtx(f=f, saddle=sad, chart=chart)


def _accumulation_witness(f: PolyMap2, chart: SemiLinChart, anchor_sigma,
                          base_steps: int, q2_sigma, delta0,
                          extras: Tuple[int, ...] = (1, 2, 3),
                          samples: int = 33,
                          one_sided: bool = False) -> AccumulationWitness:
    """Finite witness of arc accumulation onto the segment [p, q2]^u.

    For each extra step k, the manifold window anchored at the homoclinic
    parameter anchor_sigma with width delta0 / mu^k is pushed base_steps + k
    times; its image is anchored at the (contracting) forward orbit of the
    homoclinic point while sweeping along the unstable axis, so its sup
    distance to the segment {(0, s): 0 <= s <= |q2_sigma|} must fall
    geometrically.
    """
    seg_hi = abs(q2_sigma)
    mu_abs = abs(chart.mu)
    dists = []
    for k in extras:
        half = R(delta0) / mu_abs ** k
        worst = R(0)
        count = 0
        for i in range(samples):
            frac = R(i) / (samples - 1)
            if one_sided:
                sigma = anchor_sigma + half * frac
            else:
                sigma = anchor_sigma + half * (2 * frac - 1)
            try:
                w, _, _, _ = composite_y_jet(f, chart, sigma, base_steps + k)
            except (Overflow, ChartInversionError):
                continue
            if w.norm() > 8 * max(chart.rho, R(1)):
                continue
            count += 1
            yproj = min(max(w.y.real, R(0)), seg_hi)
            d = (w - Vec2(C(0), C(yproj))).norm()
            worst = max(worst, d)
        dists.append(worst if count else R("inf"))
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    return AccumulationWitness(center_sigma=R(abs(anchor_sigma)),
                               distances=tuple(dists), decreasing=decreasing)


def _secant_tip_zero(build_ctx, steps: int, a1, h1, a2, h2, sigma_seed,
                     newton: NewtonConfig):
    """Secant iteration on the fold-tip height h(a); returns (ctx, sigma, a)."""
    tol = newton.effective_tol()
    a_prev, h_prev = C(a1), h1
    a_cur, h_cur = C(a2), h2
    sigma = C(sigma_seed)
    ctx = None
    for _ in range(newton.max_iters):
        if ctx is not None and abs(h_cur) <= tol:
            return ctx, sigma, a_cur
        denom = h_cur - h_prev
        if denom == 0:
            break
        a_next = a_cur - C(h_cur) * (a_cur - a_prev) / denom
        ctx = build_ctx(a_next)
        sigma, w, _ = _tip_solve(ctx.f, ctx.chart, steps, sigma)
        a_prev, h_prev = a_cur, h_cur
        a_cur, h_cur = a_next, w.y.real
    if ctx is None or abs(h_cur) > gmpy2.sqrt(tol):
        raise NoConvergence("tip-height secant stalled")
    return ctx, sigma, a_cur


def find_tangency(family: PolyFamily, t, seed_a, tau: Sequence = None,
                  saddle_seed: Vec2 = None, chart_order: int = 16,
                  scan_halfwidth="0.2", scan_points: int = 9,
                  step_max: int = 10, interior_extra: int = 4,
                  interior_points: int = 14, q_floor="1e-6",
                  angle_floor="1e-3", newton: NewtonConfig = NewtonConfig(),
                  with_witnesses: bool = True,
                  arc_tol="1e-3") -> TangencyRecord:
    """Locate and certify a strong-tangency candidate along the a-line.

    Two stages.  First, the threshold: track the first fold of the
    unstable arc near the stable axis and find the parameter where its tip
    height crosses zero (the first homoclinic contact).  At that parameter
    the manifold is entirely one-sided, so no transversal companion can
    exist; the certified tangency must lie inside the homoclinic regime.
    Second stage: move past the threshold on the crossing side and track
    the deeper folds (images of the punched-through primary fold); the
    first of those whose tip height changes sign gives the interior
    tangency, polished by a joint (sigma, a) Newton with analytic
    sigma-jets and finite-difference a-columns.  At the result the primary
    fold crosses the axis transversally, which supplies q2.
    """
    if tau is None:
        tau = (0,) * family.tau_dim
    tau = tuple(C(v) for v in tau)
    t = C(t)
    seed_a = C(seed_a)
    if saddle_seed is None:
        saddle_seed = Vec2.of(-2, -2)
    q_floor = R(q_floor)

    ctx0 = _SliceCtx.build(family, t, seed_a, tau, saddle_seed, chart_order, newton)
    band_hi = R("0.8") * ctx0.chart.rho
    band_lo = band_hi / abs(ctx0.saddle.mu) / R("1.05")
    y_cap = 2 * max(ctx0.chart.rho, R(1))
    x_cap = ctx0.chart.rho

    def build_ctx(a_val, seed_pt=None):
        return _SliceCtx.build(family, t, a_val, tau,
                               seed_pt if seed_pt is not None else ctx0.saddle.point,
                               chart_order, newton)

    # --- stage 1: the first-contact threshold ------------------------------
    steps1 = None
    tip_seed = None
    for j in range(1, step_max + 1):
        cands = _fold_candidates(ctx0.f, ctx0.chart, j, band_lo, band_hi,
                                 scan=240, y_cap=y_cap, x_cap=x_cap)
        if cands:
            steps1 = j
            tip_seed = min(cands, key=lambda c: c[1])[0]
            break
    if steps1 is None:
        raise NoConvergence("no fold of the unstable arc near the stable axis "
                            "within %d steps" % step_max)

    half = R(scan_halfwidth)
    sigma_c, w_c, _ = _tip_solve(ctx0.f, ctx0.chart, steps1, tip_seed)
    prev = (seed_a, sigma_c, w_c.y.real)
    bracket = None
    for k in range(1, scan_points + 1):
        for direction in (1, -1):
            a_val = seed_a + direction * half * k / scan_points
            try:
                ctx = build_ctx(a_val)
                sigma_c, w_c, _ = _tip_solve(ctx.f, ctx.chart, steps1, prev[1])
            except (ToolkitError, ValueError):
                continue
            h = w_c.y.real
            if h * prev[2] < 0:
                bracket = (prev, (a_val, sigma_c, h))
            prev = (a_val, sigma_c, h)
        if bracket:
            break
    if bracket is None:
        raise NoConvergence("fold-tip height does not change sign within the "
                            "a-scan window")
    (b1_a, b1_s, b1_h), (b2_a, b2_s, b2_h) = bracket
    _, sigma_star, a_star = _secant_tip_zero(build_ctx, steps1, b1_a, b1_h,
                                             b2_a, b2_h, b2_s, newton)
    # crossing side: where the tip height becomes negative in chart y
    side = 1 if (b2_h - b1_h) * (b2_a - b1_a).real < 0 else -1

    # --- stage 2: interior tangency of a deeper fold ------------------------
    delta = half / (3 * interior_points)
    tracked: Dict[int, List[Tuple[mpfr, mpfr]]] = {}
    interior = None
    a_scan_prev = None
    for k in range(0, interior_points + 1):
        a_val = a_star + side * delta * (k + R("0.5"))
        try:
            ctx = build_ctx(a_val)
        except (ToolkitError, ValueError):
            continue
        found: Dict[int, List[Tuple[mpfr, mpfr]]] = {}
        for j in range(steps1 + 1, steps1 + interior_extra + 1):
            cands = _fold_candidates(ctx.f, ctx.chart, j, band_lo, band_hi,
                                     scan=600, y_cap=R(1), x_cap=x_cap)
            tips = []
            for (sig, _absy) in cands:
                try:
                    sig_t, w_t, _ = _tip_solve(ctx.f, ctx.chart, j, sig)
                except (ToolkitError, ValueError):
                    continue
                if abs(w_t.x) > x_cap or abs(sig_t.imag) > R("1e-6"):
                    continue
                tips.append((sig_t.real, w_t.y.real))
            found[j] = sorted(tips)
        matches = []
        for j, tips in sorted(found.items()):
            old = tracked.get(j, [])
            for (sg, h) in tips:
                for (sg0, h0) in old:
                    if abs(sg - sg0) < R("0.02") and h * h0 < 0:
                        matches.append((j, sg0, h0, sg, h))
                        break
        if matches and a_scan_prev is not None:
            j, sg0, h0, sg, h = min(matches, key=lambda m: (m[0], m[3]))
            ctx, sigma, a_val = _secant_tip_zero(
                build_ctx, j, a_scan_prev, h0, a_val, h, sg, newton)
            interior = (j, sigma, a_val, ctx)
            break
        tracked = found
        a_scan_prev = a_val
    if interior is None:
        raise NoConvergence("no interior fold tangency found past the "
                            "first-contact threshold")
    steps, sigma, a_val, ctx = interior

    # --- joint 2D Newton polish on (sigma, a) -------------------------------
    tol = newton.effective_tol()
    h_fd = max(abs(a_val), R("1e-3")) * R(2) ** (-(get_precision() // 4))
    final = None
    for _ in range(newton.max_iters):
        w, g1, g2, _ = composite_y_jet(ctx.f, ctx.chart, sigma, steps)
        res = max(abs(w.y), abs(g1.y) * min(R(1), abs(sigma)))
        if res <= tol:
            final = (w, g1, g2)
            break
        ctx_p = build_ctx(a_val + h_fd, ctx.saddle.point)
        wp, gp, _, _ = composite_y_jet(ctx_p.f, ctx_p.chart, sigma, steps)
        ctx_m = build_ctx(a_val - h_fd, ctx.saddle.point)
        wm, gm, _, _ = composite_y_jet(ctx_m.f, ctx_m.chart, sigma, steps)
        ya = (wp.y - wm.y) / (2 * h_fd)
        dya = (gp.y - gm.y) / (2 * h_fd)
        jac = Mat2(g1.y, ya, g2.y, dya)
        step_v = jac.solve(Vec2(w.y, g1.y))
        sigma = sigma - step_v.x
        a_val = a_val - step_v.y
        ctx = build_ctx(a_val, ctx.saddle.point)
    if final is None:
        raise NoConvergence("tangency Newton did not meet tolerance")
    w, g1, g2 = final
    if abs(g2.y) < q_floor:
        raise DegenerateTangency("second derivative %s below Q floor"
                                 % format(abs(g2.y), ".3g"))

    # companion transversal point from the punched-through primary fold
    crossing = None
    last_err: Optional[ToolkitError] = None
    for j in range(steps1, steps + 1):
        try:
            arc = grow_manifold(ctx.chart, ctx.f, "unstable", j,
                                arc_tol, sigma_lo=band_lo, sigma_hi=band_hi)
            crossing = find_transversal(arc, ctx.chart, ctx.f,
                                        angle_floor=angle_floor)
            break
        except (NoCrossing, TangentialOnly, Overflow, BudgetExceeded) as exc:
            last_err = exc
    if crossing is None:
        raise NoCrossing("no transversal companion at steps %d..%d: %s"
                         % (steps1, steps, last_err))
    mu_abs = abs(ctx.saddle.mu)
    v3 = abs(sigma)
    q2_sigma = crossing.sigma
    q2_steps = crossing.steps
    while abs(q2_sigma) > v3:
        q2_sigma = q2_sigma / ctx.saddle.mu
        q2_steps += 1
    while abs(q2_sigma) <= v3 / mu_abs:
        q2_sigma = q2_sigma * ctx.saddle.mu
        q2_steps -= 1
        if q2_steps < 1:
            raise NoCrossing("transversal point cannot be pulled into the "
                             "fundamental annulus")
    f8_gap = abs(q2_sigma) - v3 / mu_abs

    witness_q2 = witness_q1 = None
    if with_witnesses:
        slope_scale = max(R(1), abs(crossing.dy_dsigma))
        delta_q2 = abs(q2_sigma) * abs(ctx.saddle.mu) ** (crossing.steps
                                                          - q2_steps)
        witness_q2 = _accumulation_witness(
            ctx.f, ctx.chart, crossing.sigma, crossing.steps, q2_sigma,
            delta0=abs(q2_sigma) / slope_scale * delta_q2 / abs(crossing.sigma),
            one_sided=True)
        witness_q1 = _accumulation_witness(
            ctx.f, ctx.chart, sigma, steps, q2_sigma,
            delta0=gmpy2.sqrt(abs(q2_sigma) / max(abs(g2.y), R(1))) / 2,
            one_sided=False)

    return TangencyRecord(
        t=t, a=a_val, tau=tau, steps=steps, sigma=sigma, q1=w,
        q2_sigma=q2_sigma, q2_slope=crossing.slope, q2_steps=q2_steps,
        q_second=abs(g2.y), residual_y=abs(w.y), residual_dy=abs(g1.y),
        orientation=1 if ctx.saddle.mu.real >= 0 else -1,
        f8_gap=f8_gap, witness_q2=witness_q2, witness_q1=witness_q1,
    )


# ---------------------------------------------------------------------------
# critical curve and unfolding normalization

def critical_curve(f: PolyMap2, chart: SemiLinChart, n_steps: int, x,
                   y_seed, q_floor="1e-6", max_iters: int = 60):
    """Solve dY/dy(x, c) = 0 for the critical height c above abscissa x.

    Y is the chart y-coordinate of the n-step image of the chart point
    (x, y).  Returns (c, d2Y/dy2); raises QViolated below the floor.
    """
    x = C(x)
    y = C(y_seed)
    tol = R(2) ** (-(2 * get_precision()) // 3)
    q_floor = R(q_floor)
    for _ in range(max_iters):
        z, d1, d2 = _vertical_jet(chart, x, y)
        zf, v1, v2, _ = orbit_jet(f, z, d1, d2, n_steps)
        w, g1, g2 = to_chart_jet(chart, zf, v1, v2)
        if abs(g1.y) <= tol * max(R(1), abs(g2.y)):
            if abs(g2.y) < q_floor:
                raise QViolated("d2Y/dy2 = %s below floor" % format(abs(g2.y), ".3g"))
            return y, g2.y
        if g2.y == 0:
            raise QViolated("flat critical line")
        y = y - g1.y / g2.y
    raise NoConvergence("critical height Newton stalled")


def _vertical_jet(chart: SemiLinChart, x, y):
    """Jets of y -> Phi(x, y) along the vertical chart line."""
    zs = chart.stable.eval(x)
    zu, du, ddu = chart.unstable.eval_jet(y)
    p = chart.point
    return (Vec2(zs.x + zu.x - p.x, zs.y + zu.y - p.y),
            Vec2(du.x, du.y), Vec2(ddu.x, ddu.y))


def invert_height_map(zfun: Callable, target, a_seed, dz_floor="1e-8",
                      max_iters: int = 60, h_scale=None) -> mpc:
    """Solve zfun(a) = target by Newton with finite-difference derivatives.

    This realizes the lazy unfolding reparametrization a' -> a.  Raises
    P2Violated when |d zfun/da| falls below the floor.
    """
    a = C(a_seed)
    target = C(target)
    tol = R(2) ** (-(2 * get_precision()) // 3)
    floor = R(dz_floor)
    h = h_scale if h_scale is not None else max(abs(a), R("1e-3"))
    h = R(h) * R(2) ** (-(get_precision() // 4))
    for _ in range(max_iters):
        val = zfun(a) - target
        if abs(val) <= tol:
            return a
        dz = (zfun(a + h) - zfun(a - h)) / (2 * h)
        if abs(dz) < floor:
            raise P2Violated("|dz/da| = %s below floor" % format(abs(dz), ".3g"))
        a = a - val / dz
    raise NoConvergence("height-map inversion stalled")


# ---------------------------------------------------------------------------
# unfolding frames

@dataclass(frozen=True)
class CycleSystem:
    """Map + normalized chart at one parameter; the unit of all sink work.

    Chart coordinates are scaled so the primary critical point is (0, 1)
    and the slice tangency lands at (1, 0).  a_norm is the critical value
    height z_y at this parameter (the normalized vertical parameter).
    """
    f: PolyMap2
    chart: SemiLinChart
    saddle: SaddleRecord
    steps: int                 # N: excursion length
    t: mpc
    a_raw: mpc
    a_norm: mpc                # z_y(t, a_raw)
    z_x: mpc                   # critical value abscissa (normalized chart)
    crit_second: mpc           # d2Y/dy2 at the critical point (normalized)
    r_box: mpfr                # chart-residency box radius (normalized)
    tau: Tuple[mpc, ...]

    @property
    def mu(self) -> mpc:
        return self.saddle.mu

    @property
    def lam(self) -> mpc:
        return self.saddle.lam

    def in_box(self, w: Optional[Vec2]) -> bool:
        return w is not None and w.norm() <= self.r_box

    def phase_step(self, z: Vec2) -> Vec2:
        return self.f.eval(z)

    def phase_jacobian(self, z: Vec2) -> Mat2:
        return self.f.jacobian(z)

    def chart_of(self, z: Vec2, seed: Optional[Vec2] = None) -> Optional[Vec2]:
        try:
            return to_chart(self.chart, z, seed=seed)
        except ChartInversionError:
            return None

    def point_from_chart(self, w: Vec2) -> Vec2:
        return from_chart(self.chart, w)


@dataclass
class _TSlice:
    t: mpc
    a_tangency: mpc           # raw a with z_y(t, a) = 0
    sigma: mpc                # fold preimage on the unstable axis (raw chart)
    u_scale: mpc              # raw-chart abscissa of the tangency point
    saddle_point: Vec2
    dz_da: mpc                # d a_norm / d a_raw at the tangency


class UnfoldingFrame:
    """Tangency-normalized coordinates for a family, per Definition (P1)/(P2).

    Slices are solved per t (2D tangency Newton seeded from the reference)
    and cached; every slice is seeded from the reference record, so cached
    results do not depend on query order.
    """

    def __init__(self, family: PolyFamily, reference: TangencyRecord,
                 chart_order: int = 16, r_box="1.3", dz_floor="1e-8",
                 q_floor="1e-6", newton: NewtonConfig = NewtonConfig()):
        self.family = family
        self.reference = reference
        self.tau = reference.tau
        self.steps = reference.steps
        self.chart_order = chart_order
        self.r_box = R(r_box)
        self.dz_floor = R(dz_floor)
        self.q_floor = R(q_floor)
        self.newton = newton
        self._slices: Dict[str, _TSlice] = {}
        self._ref_saddle_seed = Vec2.of(-2, -2)

    # -- slice construction -------------------------------------------------

    def _solve_tangency_at(self, t: mpc) -> _TSlice:
        fam, tau, order = self.family, self.tau, self.chart_order
        newton = self.newton
        a_val = C(self.reference.a)
        sigma = C(self.reference.sigma)
        steps = self.steps
        seed_pt = self._ref_saddle_seed
        ctx = _SliceCtx.build(fam, t, a_val, tau, seed_pt, order, newton)
        tol = newton.effective_tol()
        h_fd = max(abs(a_val), R("1e-3")) * R(2) ** (-(get_precision() // 4))
        done = None
        for _ in range(newton.max_iters):
            w, g1, g2, _ = composite_y_jet(ctx.f, ctx.chart, sigma, steps)
            if max(abs(w.y), abs(g1.y)) <= tol:
                done = (w, g1, g2)
                break
            ctx_p = _SliceCtx.build(fam, t, a_val + h_fd, tau, ctx.saddle.point,
                                    order, newton)
            wp, gp, _, _ = composite_y_jet(ctx_p.f, ctx_p.chart, sigma, steps)
            ctx_m = _SliceCtx.build(fam, t, a_val - h_fd, tau, ctx.saddle.point,
                                    order, newton)
            wm, gm, _, _ = composite_y_jet(ctx_m.f, ctx_m.chart, sigma, steps)
            jac = Mat2(g1.y, (wp.y - wm.y) / (2 * h_fd),
                       g2.y, (gp.y - gm.y) / (2 * h_fd))
            step_v = jac.solve(Vec2(w.y, g1.y))
            sigma = sigma - step_v.x
            a_val = a_val - step_v.y
            ctx = _SliceCtx.build(fam, t, a_val, tau, ctx.saddle.point, order, newton)
        if done is None:
            raise NoConvergence("tangency continuation failed at t=%s"
                                % format(t.real, ".6g"))
        w, g1, g2 = done
        if abs(g2.y) < self.q_floor:
            raise DegenerateTangency("Q = %s below floor during continuation"
                                     % format(abs(g2.y), ".3g"))
        sl = _TSlice(t=t, a_tangency=a_val, sigma=sigma, u_scale=w.x,
                     saddle_point=ctx.saddle.point, dz_da=C(0))
        sl.dz_da = self._height_derivative(sl)
        if abs(sl.dz_da) < self.dz_floor:
            raise P2Violated("(P2) fails at t=%s: |dz_y/da| = %s"
                             % (format(t.real, ".6g"), format(abs(sl.dz_da), ".3g")))
        return sl

    def slice_at(self, t) -> _TSlice:
        t = C(t)
        key = "%s" % t
        got = self._slices.get(key)
        if got is None:
            got = self._solve_tangency_at(t)
            self._slices[key] = got
        return got

    # -- normalized systems --------------------------------------------------

    def _raw_system(self, sl: _TSlice, a_raw: mpc) -> CycleSystem:
        f = self.family.specialize(sl.t, a_raw, self.tau)
        sad = find_saddle(f, sl.saddle_point, self.newton)
        raw_chart = build_chart(f, sad, order=self.chart_order, full=False)
        c0, _ = critical_curve(f, raw_chart, self.steps, C(0), sl.sigma,
                               q_floor=self.q_floor)
        chart = rescale_chart(raw_chart, sl.u_scale, c0)
        crit = Vec2(C(0), C(1))
        z_first, z_d1, z_d2 = _vertical_jet(chart, crit.x, crit.y)
        zf, v1, v2, _ = orbit_jet(f, z_first, z_d1, z_d2, self.steps)
        zw, zg1, zg2 = to_chart_jet(chart, zf, v1, v2)
        return CycleSystem(
            f=f, chart=chart, saddle=sad, steps=self.steps, t=sl.t,
            a_raw=C(a_raw), a_norm=zw.y, z_x=zw.x, crit_second=zg2.y,
            r_box=self.r_box, tau=self.tau,
        )

    def system_raw(self, t, a_raw) -> CycleSystem:
        return self._raw_system(self.slice_at(t), C(a_raw))

    def system(self, t, a_norm, a_raw_seed=None) -> CycleSystem:
        """System at normalized parameters: solves z_y(t, a) = a_norm."""
        sl = self.slice_at(t)
        a_norm = C(a_norm)
        seed = C(a_raw_seed) if a_raw_seed is not None else \
            sl.a_tangency + a_norm / sl.dz_da
        cache: Dict[str, CycleSystem] = {}

        def zfun(a):
            key = "%s" % a
            sys = cache.get(key)
            if sys is None:
                sys = self._raw_system(sl, a)
                cache[key] = sys
            return sys.a_norm

        a_solved = invert_height_map(zfun, a_norm, seed,
                                     dz_floor=self.dz_floor,
                                     h_scale=max(abs(a_norm), R("1e-6")))
        key = "%s" % a_solved
        return cache.get(key) or self._raw_system(sl, a_solved)

    def _height_derivative(self, sl: _TSlice) -> mpc:
        h = max(abs(sl.a_tangency), R("1e-3")) * R(2) ** (-(get_precision() // 4))
        zp = self._raw_system(sl, sl.a_tangency + h).a_norm
        zm = self._raw_system(sl, sl.a_tangency - h).a_norm
        return (zp - zm) / (2 * h)


def normalize_unfolding(family: PolyFamily, tang: TangencyRecord,
                        chart_order: int = 16, dz_floor="1e-8",
                        q_floor="1e-6", r_box="1.3",
                        newton: NewtonConfig = NewtonConfig()) -> UnfoldingFrame:
    """Build the normalized unfolding frame around a certified tangency.

    Verifies (P2) at the reference slice by a finite-difference height
    derivative at a precision-scaled step; (P1) holds by construction
    (the slice tangency is re-solved per t, pinning z_y(t, 0) = 0).
    """
    frame = UnfoldingFrame(family, tang, chart_order=chart_order,
                           r_box=r_box, dz_floor=dz_floor, q_floor=q_floor,
                           newton=newton)
    frame.slice_at(tang.t)  # raises P2Violated / DegenerateTangency if unfit
    return frame
