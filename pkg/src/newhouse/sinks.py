"""Simple periodic orbits, sink curves, strips, and the scaling reports.

All orbit work runs in phase space against a CycleSystem (map + normalized
chart at one parameter); the chart enters only through seeds, itinerary
flags, and the normalized vertical parameter.  Parameters handed to these
operations are normalized: the vertical coordinate is the critical value
height, so strong-sink curves scale like 1/mu^n with O(1) constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import gmpy2
from gmpy2 import mpc, mpfr

from .homoclinic import UnfoldingFrame, CycleSystem
from .maps import Overflow
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
from .saddle import ChartInversionError, from_chart, to_chart


class WrongItinerary(ToolkitError):
    pass


class CurveLost(ToolkitError):
    pass


class StripViolation(ToolkitError):
    def __init__(self, msg: str, failures=None):
        super().__init__(msg)
        self.failures = failures or []


# ---------------------------------------------------------------------------
# simple orbits

@dataclass(frozen=True)
class SimpleOrbit:
    t: mpc
    a_raw: mpc
    a_norm: mpc
    tau: Tuple[mpc, ...]
    n_excursion: int           # N
    n_chart: int               # n
    point: Vec2                # starting point, chart coordinates
    point_phase: Vec2
    cycle_derivative: Mat2     # DF^{N+n} at the orbit point (phase space)
    trace: mpc
    det: mpc
    eigen_moduli: Tuple[mpfr, mpfr]
    attracting: bool
    lemma_bounds_hold: bool    # |tr| <= 1/3 and |det| <= 1/40
    residual: mpfr
    in_box_flags: Tuple[bool, ...]

    @property
    def period(self) -> int:
        return self.n_excursion + self.n_chart


def attracting_roots(trace, det) -> Tuple[mpfr, mpfr]:
    """Moduli of the roots of z^2 - trace z + det, descending."""
    trace, det = C(trace), C(det)
    s = gmpy2.sqrt(trace * trace - 4 * det)
    if (trace.conjugate() * s).real >= 0:
        big = (trace + s) / 2
    else:
        big = (trace - s) / 2
    if big == 0:
        r1, r2 = (trace + s) / 2, (trace - s) / 2
        return max(abs(r1), abs(r2)), min(abs(r1), abs(r2))
    small = det / big
    m1, m2 = abs(big), abs(small)
    return (m1, m2) if m1 >= m2 else (m2, m1)


def is_attracting(trace, det) -> Tuple[bool, bool, mpfr]:
    """Sink test on the cycle derivative's trace and determinant.

    Returns (attracting, sufficient_bounds_hold, max_root_modulus) where
    the sufficient bounds are |trace| <= 1/3 and |det| <= 1/40.
    """
    m1, _ = attracting_roots(trace, det)
    bounds = abs(C(trace)) <= R(1) / 3 and abs(C(det)) <= R(1) / 40
    return bool(m1 < 1), bool(bounds), m1


def _cycle_newton(system, z0: Vec2, period: int, newton: NewtonConfig,
                  step_cap="0.05") -> Tuple[Vec2, Mat2, mpfr, int]:
    """Newton for F^period(z) = z; returns point, DF^period, residual, iters.

    Steps are capped and halved on orbit escape: near a fold the first
    correction from a rough seed can overshoot violently even though the
    system is well-conditioned at the solution (trace ~ 0 makes the cycle
    derivative near-nilpotent, so det(DF^period - I) ~ 1).
    """
    tol = newton.effective_tol()
    cap = R(step_cap)
    escape = R(2) ** 64

    def evaluate(z):
        deriv = Mat2.identity()
        cur = z
        for _ in range(period):
            if cur.norm() > escape:
                return None
            deriv = system.phase_jacobian(cur) * deriv
            cur = system.phase_step(cur)
        if cur.norm() > escape:
            return None
        return cur, deriv

    z = z0
    state = evaluate(z)
    if state is None:
        raise NoConvergence("cycle orbit escaped at the seed", 0)
    for it in range(newton.max_iters + 1):
        cur, deriv = state
        err = cur - z
        res = err.norm()
        if res <= tol:
            return z, deriv, res, it
        if it == newton.max_iters:
            raise NoConvergence("cycle Newton hit max_iters", it, res, z)
        system_m = deriv - Mat2.identity()
        if system_m.det() == 0:
            raise NoConvergence("singular cycle Newton system", it, res, z)
        step = system_m.solve(err)
        cap_here = cap * max(R(1), z.norm())
        if step.norm() > cap_here:
            step = step.scale(cap_here / step.norm())
        next_state = None
        for _ in range(8):
            cand = z - step
            next_state = evaluate(cand)
            if next_state is not None:
                z = cand
                break
            step = step.scale(R("0.5"))
        if next_state is None:
            raise NoConvergence("cycle Newton could not avoid escape", it, res, z)
        state = next_state
    raise AssertionError("unreachable")


def find_simple_orbit(system, n: int, seed: Optional[Vec2] = None,
                      newton: NewtonConfig = NewtonConfig(),
                      require_itinerary: bool = True) -> SimpleOrbit:
    """Locate the period-(N+n) simple orbit of the system.

    Newton on F^{N+n}(z) = z seeded near the tangency preimage (0, 1) in
    chart coordinates.  The converged orbit must follow the simple
    itinerary: start inside the chart box, leave it during the excursion,
    re-enter at step N and stay inside for the following n steps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    period = system.steps + n
    if seed is None:
        seed = system.point_from_chart(Vec2.of(0, 1))
    z, deriv, res, _ = _cycle_newton(system, seed, period, newton)

    flags: List[bool] = []
    cur = z
    for _ in range(period):
        w = system.chart_of(cur)
        flags.append(system.in_box(w))
        cur = system.phase_step(cur)
    if require_itinerary:
        n_exc = system.steps
        head_ok = flags[0]
        excursion_ok = (n_exc == 1) or any(not f for f in flags[1:n_exc])
        tail_ok = all(flags[n_exc:period])
        if not (head_ok and excursion_ok and tail_ok):
            raise WrongItinerary(
                "converged orbit violates the chart-residency pattern: %s"
                % "".join("1" if f else "0" for f in flags))

    trace = deriv.trace()
    det = deriv.det()
    attracting, bounds, m1 = is_attracting(trace, det)
    _, m2 = attracting_roots(trace, det)
    w0 = system.chart_of(z)
    return SimpleOrbit(
        t=system.t, a_raw=system.a_raw, a_norm=system.a_norm,
        tau=getattr(system, "tau", ()), n_excursion=system.steps, n_chart=n,
        point=w0 if w0 is not None else Vec2.of(0, 0), point_phase=z,
        cycle_derivative=deriv, trace=trace, det=det,
        eigen_moduli=(m1, m2), attracting=attracting,
        lemma_bounds_hold=bounds, residual=res, in_box_flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# sink curves: trace-zero parameter graphs

@dataclass(frozen=True)
class SinkCurvePoint:
    t: mpc
    a_raw: mpc
    a_norm: mpc              # sa_n(t), normalized units
    mu: mpc                  # unstable eigenvalue at this parameter
    orbit: SimpleOrbit
    scaled_height: mpfr      # |sa_n(t)| * |mu(t)|^n
    dz_da: mpc               # local normalized/raw parameter derivative


@dataclass(frozen=True)
class SinkCurve:
    n: int
    points: Tuple[SinkCurvePoint, ...]

    def point_at(self, t) -> SinkCurvePoint:
        t = C(t)
        for pt in self.points:
            if pt.t == t:
                return pt
        raise KeyError("no curve sample at t = %s" % t)


class _MapShim:
    """Minimal phase-space view of a bare polynomial map."""

    def __init__(self, fmap):
        self._f = fmap

    def phase_step(self, z):
        return self._f.eval(z)

    def phase_jacobian(self, z):
        return self._f.jacobian(z)


def _trace_at(f, z_seed: Vec2, period: int,
              newton: NewtonConfig) -> Tuple[mpc, Vec2, Mat2, mpfr]:
    z, deriv, res, _ = _cycle_newton(_MapShim(f), z_seed, period, newton)
    return deriv.trace(), z, deriv, res


def solve_sink_point(frame: UnfoldingFrame, n: int, t,
                     a_norm_seed=None, orbit_seed: Optional[Vec2] = None,
                     newton: NewtonConfig = NewtonConfig(),
                     trace_tol=None) -> SinkCurvePoint:
    """Trace-zero parameter sa_n(t) and its simple orbit, solved jointly.

    The unknowns (p_x, p_y, a_raw) satisfy the bordered system
    {F^{N+n}(p) = p, trace DF^{N+n}_p = 0}.  Bordering matters: near the
    curve the periodic orbit sits next to its saddle-node partner, so
    solving the orbit at fixed parameter and the trace in an outer loop is
    badly conditioned at cold starts, while the 3x3 system is regular.
    Parameter columns of the Jacobian are central finite differences.
    """
    sl = frame.slice_at(t)
    if a_norm_seed is None:
        sys_probe = frame.system_raw(t, sl.a_tangency)
        a_norm_seed = 1 / sys_probe.mu ** n
        a_raw = sys_probe.a_raw + C(a_norm_seed) / sl.dz_da
    else:
        a_raw = sl.a_tangency + C(a_norm_seed) / sl.dz_da
    period = frame.steps + n
    if orbit_seed is None:
        sys_seed = frame.system_raw(t, a_raw)
        orbit_seed = sys_seed.point_from_chart(Vec2.of(0, 1))

    tol_orbit = newton.effective_tol()
    tol_trace = R(trace_tol) if trace_tol is not None else \
        R(2) ** (-(get_precision() // 3))
    escape = R(2) ** 64

    def cycle_eval(z: Vec2, a):
        f = frame.family.specialize(sl.t, a, frame.tau)
        deriv = Mat2.identity()
        cur = z
        for _ in range(period):
            if cur.norm() > escape:
                return None
            deriv = f.jacobian(cur) * deriv
            cur = f.eval(cur)
        return cur, deriv

    z = orbit_seed
    a_cur = C(a_raw)
    h_p = R(2) ** (-(get_precision() // 4))
    converged = False
    for _ in range(newton.max_iters):
        state = cycle_eval(z, a_cur)
        if state is None:
            raise CurveLost("orbit escaped during the bordered solve")
        cur, deriv = state
        err = cur - z
        tr = deriv.trace()
        if err.norm() <= tol_orbit and abs(tr) <= tol_trace:
            converged = True
            break
        # finite-difference parameter column and trace row
        h_a = max(abs(a_cur), R("1e-6")) * h_p
        sp = cycle_eval(z, a_cur + h_a)
        sm = cycle_eval(z, a_cur - h_a)
        if sp is None or sm is None:
            raise CurveLost("orbit escaped during FD differentiation")
        dF_da = (sp[0] - sm[0]).scale(1 / (2 * h_a))
        dtr_da = (sp[1].trace() - sm[1].trace()) / (2 * h_a)
        h_x = max(abs(z.x), R(1)) * h_p
        h_y = max(abs(z.y), R(1)) * h_p
        sx = cycle_eval(z + Vec2.of(h_x, 0), a_cur)
        sy = cycle_eval(z + Vec2.of(0, h_y), a_cur)
        if sx is None or sy is None:
            raise CurveLost("orbit escaped during FD differentiation")
        dtr_dx = (sx[1].trace() - tr) / h_x
        dtr_dy = (sy[1].trace() - tr) / h_y
        jac3 = ((deriv.m11 - 1, deriv.m12, dF_da.x),
                (deriv.m21, deriv.m22 - 1, dF_da.y),
                (dtr_dx, dtr_dy, dtr_da))
        from .numerics import _solve3
        step = _solve3(jac3, (err.x, err.y, tr))
        z = Vec2(z.x - step[0], z.y - step[1])
        a_cur = a_cur - step[2]
    if not converged:
        raise CurveLost("bordered sink solve failed at t=%s (n=%d)" % (t, n))

    system = frame.system_raw(t, a_cur)
    orbit = find_simple_orbit(system, n, seed=z, newton=newton)
    if abs(orbit.trace) > gmpy2.sqrt(tol_trace):
        raise CurveLost("sink point lost trace-zero during the final polish")
    return SinkCurvePoint(
        t=system.t, a_raw=system.a_raw, a_norm=system.a_norm, mu=system.mu,
        orbit=orbit,
        scaled_height=abs(system.a_norm) * abs(system.mu) ** n,
        dz_da=sl.dz_da,
    )


def trace_sa_curve(frame: UnfoldingFrame, n: int, t_grid: Sequence,
                   newton: NewtonConfig = NewtonConfig(),
                   a_norm_seed=None) -> SinkCurve:
    """Strong-sink curve sa_n over a t-grid, continued point to point.

    Raises CurveLost after three consecutive grid failures.
    """
    points: List[SinkCurvePoint] = []
    misses = 0
    seed_norm = a_norm_seed
    orbit_seed = None
    for t in t_grid:
        try:
            pt = solve_sink_point(frame, n, t, a_norm_seed=seed_norm,
                                  orbit_seed=orbit_seed, newton=newton)
            points.append(pt)
            seed_norm = pt.a_norm
            orbit_seed = pt.orbit.point_phase
            misses = 0
        except (ToolkitError, ValueError) as exc:
            misses += 1
            if misses >= 3:
                raise CurveLost("sink curve lost after 3 consecutive "
                                "failures (last: %s)" % exc) from exc
    return SinkCurve(n=n, points=tuple(points))


# ---------------------------------------------------------------------------
# strips

@dataclass(frozen=True)
class StripSample:
    t: mpc
    a_norm: mpc
    attracting: bool
    lemma_bounds_hold: bool
    max_modulus: mpfr


@dataclass(frozen=True)
class Strip:
    n: int
    eps0: mpfr
    samples: Tuple[StripSample, ...]
    all_attracting: bool


def certify_strip(frame: UnfoldingFrame, curve: SinkCurve, eps0,
                  directions: int = 8, radii: int = 3,
                  newton: NewtonConfig = NewtonConfig(),
                  raise_on_failure: bool = True) -> Strip:
    """Sample the complex parameter disk of radius eps0/|mu|^{2n} around
    sa_n(t) and require an attracting simple orbit at every sample.

    The disk is filled with `directions` angles times `radii` magnitudes
    plus the center; offsets are applied in the normalized parameter via
    the local height derivative.
    """
    eps0 = R(eps0)
    n = curve.n
    samples: List[StripSample] = []
    failures: List[StripSample] = []
    two_pi = 2 * gmpy2.const_pi()
    for pt in curve.points:
        width = eps0 / abs(pt.mu) ** (2 * n)
        offsets = [C(0)]
        for r_idx in range(1, radii + 1):
            rad = width * r_idx / radii
            for d in range(directions):
                ang = two_pi * d / directions
                offsets.append(rad * C(gmpy2.cos(ang), gmpy2.sin(ang)))
        for delta in offsets:
            a_raw = pt.a_raw + delta / pt.dz_da
            f = frame.family.specialize(pt.t, a_raw, frame.tau)
            try:
                _, deriv, _, _ = _cycle_newton(
                    _MapShim(f), pt.orbit.point_phase, frame.steps + n, newton)
                attracting, bounds, m1 = is_attracting(deriv.trace(),
                                                       deriv.det())
                sample = StripSample(t=pt.t, a_norm=pt.a_norm + delta,
                                     attracting=attracting,
                                     lemma_bounds_hold=bounds, max_modulus=m1)
            except (NoConvergence, Overflow):
                sample = StripSample(t=pt.t, a_norm=pt.a_norm + delta,
                                     attracting=False,
                                     lemma_bounds_hold=False,
                                     max_modulus=R("inf"))
            samples.append(sample)
            if not sample.attracting:
                failures.append(sample)
    strip = Strip(n=n, eps0=eps0, samples=tuple(samples),
                  all_attracting=not failures)
    if failures and raise_on_failure:
        raise StripViolation(
            "%d of %d strip samples are not attracting at eps0=%s"
            % (len(failures), len(samples), format(eps0, ".4g")),
            failures=failures)
    return strip


def find_strip_epsilon(frame: UnfoldingFrame, curve: SinkCurve,
                       eps_hi="1.0", eps_lo="1e-6", rounds: int = 10,
                       directions: int = 8, radii: int = 2,
                       newton: NewtonConfig = NewtonConfig()) -> mpfr:
    """Largest certified eps0 by dyadic bisection on [eps_lo, eps_hi]."""
    eps_hi, eps_lo = R(eps_hi), R(eps_lo)

    def passes(eps):
        try:
            strip = certify_strip(frame, curve, eps, directions=directions,
                                  radii=radii, newton=newton,
                                  raise_on_failure=False)
        except ToolkitError:
            return False
        return strip.all_attracting

    if passes(eps_hi):
        return eps_hi
    if not passes(eps_lo):
        raise StripViolation("strip fails even at eps0 = %s"
                             % format(eps_lo, ".3g"))
    lo, hi = eps_lo, eps_hi
    for _ in range(rounds):
        mid = gmpy2.sqrt(lo * hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# scaling report

@dataclass(frozen=True)
class ScalingRow:
    n: int
    a_norm: mpc
    sup_x_ratio: mpfr        # sup_k |x_k| / |lam|^k
    sup_y_ratio: mpfr        # sup_k |y_k| * |mu|^{n-k}
    a11: mpc                 # DG^n entries over (lam mu)^n, (lam mu)^n, 1, mu^n
    a12: mpc
    a21: mpc
    a22: mpc
    dist_q3: mpfr            # |p_n - q3| in normalized chart coordinates
    dtrace_da_scaled: mpfr   # |d trace / d a_norm| / |mu|^{2n}
    s_used: mpfr             # max |D_k|, |E_k| of the contraction bookkeeping
    s_limit: mpfr            # min(1/2, |mu|-1, 1-|lam|)
    m_fit: mpfr              # fitted M with |D_k| <= M |y_k|, |E_k| <= M |x_k|
    det_cycle: mpfr


@dataclass(frozen=True)
class ScalingReport:
    t: mpc
    rows: Tuple[ScalingRow, ...]

    def decay_fit_q3(self) -> Tuple[mpfr, mpfr]:
        """Log-linear fit of |p_n - q3| against n: (rate, correlation)."""
        xs = [R(row.n) for row in self.rows]
        ys = [gmpy2.log(row.dist_q3) for row in self.rows
              if row.dist_q3 > 0]
        xs = xs[:len(ys)]
        n = len(xs)
        if n < 2:
            return R(0), R(0)
        mean_x = sum(xs) / n
        mean_y = sum(ys) / n
        sxx = sum((x - mean_x) ** 2 for x in xs)
        syy = sum((y - mean_y) ** 2 for y in ys)
        sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
        slope = sxy / sxx
        corr = abs(sxy) / gmpy2.sqrt(sxx * syy) if syy > 0 else R(1)
        return -slope, corr


def scaling_report(frame: UnfoldingFrame, n_values: Sequence[int], t,
                   eps0_for_step="0.01",
                   newton: NewtonConfig = NewtonConfig()) -> ScalingReport:
    """Orbit estimates, chart-derivative structure, q3 convergence, and
    trace-derivative scaling along the sink curves at fixed t."""
    rows: List[ScalingRow] = []
    orbit_seed = None
    prev: Optional[SinkCurvePoint] = None
    prev_n = None
    for n in n_values:
        if prev is None:
            seed_norm = None
        else:
            # predict the curve height: sa_n ~ sa_{prev} / mu^{n - prev_n}
            seed_norm = prev.a_norm / prev.mu ** (n - prev_n)
        pt = solve_sink_point(frame, n, t, a_norm_seed=seed_norm,
                              orbit_seed=orbit_seed, newton=newton)
        orbit_seed = pt.orbit.point_phase
        system = frame.system_raw(t, pt.a_raw)
        rows.append(_scaling_row(frame, system, pt, n, eps0_for_step, newton))
        prev, prev_n = pt, n
    return ScalingReport(t=C(t), rows=tuple(rows))


def _scaling_row(frame: UnfoldingFrame, system: CycleSystem,
                 pt: SinkCurvePoint, n: int, eps0_for_step,
                 newton: NewtonConfig) -> ScalingRow:
    lam, mu = system.lam, system.mu
    lam_abs, mu_abs = abs(lam), abs(mu)
    z = pt.orbit.point_phase
    # walk to the chart entry point
    for _ in range(system.steps):
        z = system.phase_step(z)
    ws: List[Vec2] = []
    deriv = Mat2.identity()
    zc = z
    for k in range(n + 1):
        w = system.chart_of(zc)
        if w is None:
            raise WrongItinerary("chart segment point left the chart")
        ws.append(w)
        if k < n:
            deriv = system.phase_jacobian(zc) * deriv
            zc = system.phase_step(zc)
    sup_x = max(abs(ws[k].x) / lam_abs ** k for k in range(n + 1))
    sup_y = max(abs(ws[k].y) * mu_abs ** (n - k) for k in range(n + 1))

    # chart-coordinate derivative of the n chart steps
    from .saddle import chart_jacobian
    dphi0 = chart_jacobian(system.chart, ws[0])
    dphin = chart_jacobian(system.chart, ws[n])
    gmat = dphin.inverse() * deriv * dphi0
    lm_n = (lam * mu) ** n
    mu_n = mu ** n
    a11 = gmat.m11 / lm_n
    a12 = gmat.m12 / lm_n
    a21 = gmat.m21
    a22 = gmat.m22 / mu_n

    dist_q3 = (system.chart_of(pt.orbit.point_phase) - Vec2.of(0, 1)).norm()

    # trace derivative in the normalized parameter by central differences
    delta_norm = R(eps0_for_step) / (100 * mu_abs ** (2 * n))
    period = system.steps + n
    tr_vals = []
    for sgn in (1, -1):
        a_raw = pt.a_raw + sgn * delta_norm / pt.dz_da
        f = frame.family.specialize(pt.t, a_raw, frame.tau)
        _, d, _, _ = _cycle_newton(_MapShim(f), pt.orbit.point_phase,
                                   period, newton)
        tr_vals.append(d.trace())
    dtr = abs(tr_vals[0] - tr_vals[1]) / (2 * delta_norm)
    dtr_scaled = dtr / mu_abs ** (2 * n)

    # Lemma 3.2 proof bookkeeping
    s_used = R(0)
    m_fit = R(0)
    for k in range(n):
        dk = (ws[k + 1].x - lam * ws[k].x)
        ek = (ws[k + 1].y - mu * ws[k].y)
        dk_rel = abs(dk) / abs(ws[k].x) if abs(ws[k].x) > 0 else R(0)
        ek_rel = abs(ek) / abs(ws[k].y) if abs(ws[k].y) > 0 else R(0)
        s_used = max(s_used, dk_rel, ek_rel)
        if abs(ws[k].y) > 0:
            m_fit = max(m_fit, dk_rel / abs(ws[k].y))
        if abs(ws[k].x) > 0:
            m_fit = max(m_fit, ek_rel / abs(ws[k].x))
    s_limit = min(R(1) / 2, mu_abs - 1, 1 - lam_abs)

    return ScalingRow(
        n=n, a_norm=pt.a_norm, sup_x_ratio=sup_x, sup_y_ratio=sup_y,
        a11=a11, a12=a12, a21=a21, a22=a22, dist_q3=dist_q3,
        dtrace_da_scaled=dtr_scaled, s_used=s_used, s_limit=s_limit,
        m_fit=m_fit, det_cycle=abs(pt.orbit.det),
    )
