"""Derivative families of the ground states and Morse index by zero counting.

``d/db Psi_b`` and ``d/dc Psi_c`` both solve the homogeneous variational
equation ``M gamma = 0`` about the same frozen base.  The decaying one
(``d/dc``) has as many zeros as the linearised operator has negative
eigenvalues, which gives the Morse index.

Linear solutions are integrated from a normalised anchor; the true solution
is ``traj * exp(log_scale)``.  Runs are renormalised whenever the mantissa
exceeds ``RENORM_AT`` so that nothing overflows.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import model
from .model import ProblemParams
from .ode_core import (AbscissaKind, OutOfSpan, Tolerances, Trajectory, integrate,
                       refine_events)
from .shooting import GroundState, SingularState, tail_solution

log = logging.getLogger(__name__)

RENORM_AT = 1e100
R_MIN_RADIAL = 0.05
LINEAR_TOL = Tolerances(rtol=1e-11, atol=1e-14)


class WindowSuspect(ValueError):
    """A zero sits too close to the edge of the counting window."""


class NoOverlap(ValueError):
    pass


class SpanTooShort(ValueError):
    pass


class LinearKind(enum.Enum):
    DB_PSI_B = "db_psi_b"
    DC_PSI_C = "dc_psi_c"
    DC_PSI_INF = "dc_psi_inf"
    THETA_PRIME = "theta_prime"


@dataclass(frozen=True)
class LinearSolution:
    """Solution of a homogeneous linearised equation in ``t`` (increasing order).

    ``segments`` are consecutive pieces with their own log scales; ``traj`` is
    their concatenation expressed in the scale ``log_scale`` of the last
    piece integrated.  ``zeros`` are refined per segment, so they are never
    affected by the renormalisation.
    """
    kind: LinearKind
    base: object
    params: ProblemParams
    traj: Trajectory
    log_scale: float
    zeros: tuple
    segments: tuple = field(default_factory=tuple)
    simple_zeros: bool = True

    @property
    def span(self):
        return self.traj.span

    def mantissa(self, t: float):
        return self.traj(t)

    def value(self, t):
        """True ``(gamma, gamma')`` at scalar or array ``t``."""
        y, dy = self.traj.sample(np.atleast_1d(np.asarray(t, dtype=float)))
        s = math.exp(self.log_scale)
        if np.ndim(t) == 0:
            return float(y[0] * s), float(dy[0] * s)
        return y * s, dy * s

    @property
    def renormalizations(self) -> int:
        return max(len(self.segments) - 1, 0)


def _base_of(base) -> tuple[Trajectory, ProblemParams, float, float]:
    if isinstance(base, (GroundState, SingularState)):
        return base.psi, base.params, base.c_coeff, base.tail_T
    raise TypeError(f"unsupported base {type(base).__name__}")


def _tail_fn(params: ProblemParams, c: float):
    def tail(t):
        return c * math.exp(float(model.tail_log_profile(params, t)))
    return tail


def integrate_linear(rhs, x0: float, state0, x1: float, tol: Tolerances = LINEAR_TOL,
                     log_scale: float = 0.0):
    """Integrate a linear equation with renormalisation.

    The start state is normalised to unit max-norm first.  Returns the
    list of ``(trajectory, log_scale)`` segments in integration order.
    """
    y0, v0 = float(state0[0]), float(state0[1])
    m = max(abs(y0), abs(v0))
    if m == 0:
        raise ValueError("zero initial state for a linear solve")
    y0, v0 = y0 / m, v0 / m
    log_scale += math.log(m)
    tol = replace(tol, blowup_threshold=10 * RENORM_AT)
    segments = []
    x = float(x0)

    def stop(_x, y, yp):
        return abs(y) > RENORM_AT or abs(yp) > RENORM_AT

    for _ in range(100):
        traj = integrate(rhs, x, (y0, v0), x1, tol, kind=AbscissaKind.EMDEN_FOWLER_T, stop=stop)
        segments.append((traj, log_scale))
        if traj.status == "complete":
            return segments
        x = float(traj.x[-1])
        y, v = float(traj.y[-1]), float(traj.yp[-1])
        m = max(abs(y), abs(v))
        y0, v0 = y / m, v / m
        log_scale += math.log(m)
        if x == x1:
            return segments
    raise RuntimeError("too many renormalisations")


def _merge(segments, kind=AbscissaKind.EMDEN_FOWLER_T):
    """Concatenate segments in the scale of the last one, ordered by increasing x."""
    ref = segments[-1][1]
    parts = [traj.scaled(math.exp(ls - ref)) for traj, ls in segments]
    parts = [p if p.direction > 0 else p.reversed() for p in parts]
    parts.sort(key=lambda p: p.x[0])
    out = parts[0]
    for p in parts[1:]:
        out = Trajectory.join(out, p)
    return out, ref


def _zeros(segments, tol: Tolerances):
    zeros = []
    simple = True
    for traj, _ in segments:
        ev = refine_events(traj, tol)
        for e in ev:
            # slope measured against the local size of the solution
            near = np.abs(traj.x - e.x_star) <= 1.0
            local = max(float(np.max(np.abs(traj.y[near]), initial=0.0)),
                        float(np.max(np.abs(traj.yp[near]), initial=0.0)))
            if abs(e.slope) <= 1e3 * tol.atol * max(local, 1e-300):
                simple = False
        zeros.extend(ev)
    # remove duplicates at shared segment ends
    zeros.sort(key=lambda e: e.x_star)
    uniq = []
    for e in zeros:
        if not uniq or abs(e.x_star - uniq[-1].x_star) > 1e-12 * max(1.0, abs(e.x_star)):
            uniq.append(e)
    return tuple(uniq), simple


def _build(kind, base, params, segments, tol):
    traj, ref = _merge(segments)
    zeros, simple = _zeros(segments, tol)
    if not simple:
        log.warning("%s: a zero with vanishing slope was found", kind.value)
    return LinearSolution(kind=kind, base=base, params=params, traj=traj, log_scale=ref,
                          zeros=zeros, segments=tuple(segments), simple_zeros=simple)


# -- the two derivative families ----------------------------------------------------

def solve_db_psi(ground: GroundState, t_min: Optional[float] = None,
                 t_max: Optional[float] = None, tol: Tolerances = LINEAR_TOL,
                 base_psi: Optional[Trajectory] = None) -> LinearSolution:
    """``d/db Psi_b`` at fixed ``lam``, integrated forward from the small-t series.

    ``base_psi`` replaces the ground-state profile as the frozen base, e.g. a
    tighter shot on a sub-interval.
    """
    psi = ground.psi if base_psi is None else base_psi
    params = ground.params
    lo, hi = psi.span
    t_min = lo if t_min is None else t_min
    t_max = hi if t_max is None else t_max
    if t_min < lo - 1e-9 or t_max > hi + 1e-9 or t_min >= t_max:
        raise OutOfSpan(f"[{t_min}, {t_max}] not inside base span [{lo}, {hi}]")
    start = model.db_series_start(params, ground.b, t_min)
    rhs = model.variational_rhs(psi, params)
    seg = integrate_linear(rhs, t_min, start, t_max, tol)
    return _build(LinearKind.DB_PSI_B, ground, params, seg, tol)


def solve_dc_psi(base: Union[GroundState, SingularState], T_max: Optional[float] = None,
                 t_min: Optional[float] = None, tol: Tolerances = LINEAR_TOL) -> LinearSolution:
    """``d/dc Psi_c`` at fixed ``lam``, integrated backward from the unit-c tail anchor.

    Beyond the end of the base span the leading tail asymptotics supply ``Psi``.
    """
    psi, params, c, T_base = _base_of(base)
    lo, hi = psi.span
    T_max = T_base if T_max is None else T_max
    t_min = lo if t_min is None else t_min
    if t_min < lo - 1e-9 or t_min >= T_max:
        raise OutOfSpan(f"t_min={t_min} outside base span [{lo}, {hi}]")
    (y0, v0), ls = model.tail_anchor_scaled(params, T_max)
    if not math.isfinite(ls):
        raise OverflowError("tail anchor scale is not finite; lower T_max")
    rhs = model.variational_rhs(psi, params, tail=_tail_fn(params, c))
    seg = integrate_linear(rhs, T_max, (y0, v0), t_min, tol, log_scale=ls)
    kind = LinearKind.DC_PSI_INF if isinstance(base, SingularState) else LinearKind.DC_PSI_C
    return _build(kind, base, params, seg, tol)


def solve_theta_prime(theta: Trajectory, d: int, t_min: Optional[float] = None,
                      t_max: Optional[float] = None, tol: Tolerances = LINEAR_TOL):
    """``Theta'`` recomputed as a solution of the truncated variational equation."""
    lo, hi = theta.span
    t_min = lo if t_min is None else t_min
    t_max = hi if t_max is None else t_max
    c1, c0 = d - 4, 3 - d

    def rhs(t, g, gp):
        th = theta(t)[0]
        return -c1 * gp - (c0 + 3.0 * th * th) * g

    y, v = theta(t_min)
    a = model.rhs_theta(d, t_min, y, v)
    seg = integrate_linear(rhs, t_min, (v, a), t_max, tol)
    return _build(LinearKind.THETA_PRIME, theta, ProblemParams(d, 0.0), seg, tol)


# -- zero counting ---------------------------------------------------------------

def morse_index(lin: LinearSolution, window: Optional[tuple[float, float]] = None) -> int:
    """Number of zeros of the decaying solution inside ``window`` (default: its span)."""
    if lin.kind not in (LinearKind.DC_PSI_C, LinearKind.DC_PSI_INF):
        raise ValueError("the Morse index is read off the decaying d/dc solution")
    lo, hi = lin.span if window is None else window
    edge = 0.01 * (hi - lo)
    n = 0
    for z in lin.zeros:
        if lo <= z.x_star <= hi:
            if z.x_star - lo < edge or hi - z.x_star < edge:
                raise WindowSuspect(f"zero at t={z.x_star:.6g} within 1% of the window edge")
            n += 1
    return n


def radial_morse_index(base: Union[GroundState, SingularState], r_min: float = R_MIN_RADIAL,
                       r_end: Optional[float] = None, tol: Tolerances = LINEAR_TOL,
                       return_solution: bool = False):
    """Zero count of the decaying solution of ``L v = 0`` computed directly in ``r``.

    The run goes backward from ``r_end`` (default: the shooting ``r_max``) with
    the anchor ``v = r^{(lam-d)/2} e^{-r^2/2}``, normalised to one.
    """
    params = base.params
    prof = base.u_profile if isinstance(base, SingularState) else base.profile
    if r_end is None:
        r_end = float(base.diagnostics.get("r_max", 12.0))
    c = base.c_coeff

    def tail(r):
        return c * math.exp(float(model.tail_log_profile(params, math.log(r)))) / r

    rhs = model.radial_linear_rhs(prof, params, tail=tail)
    k = 0.5 * (params.lam - params.d)
    start = (1.0, k / r_end - r_end)
    t = replace(tol, blowup_threshold=10 * RENORM_AT)
    seg = []
    x, y0, v0 = r_end, start[0], start[1]

    def stop(_x, y, yp):
        return abs(y) > RENORM_AT or abs(yp) > RENORM_AT

    while True:
        tr = integrate(rhs, x, (y0, v0), r_min, t, kind=AbscissaKind.RADIAL_R, stop=stop)
        seg.append(tr)
        if tr.status == "complete":
            break
        x = float(tr.x[-1])
        m = max(abs(tr.y[-1]), abs(tr.yp[-1]))
        y0, v0 = tr.y[-1] / m, tr.yp[-1] / m
    n = 0
    for tr in seg:
        for z in refine_events(tr, tol):
            if r_min < z.x_star < r_end:
                n += 1
    if return_solution:
        return n, seg
    return n


# -- independence and tail sign -------------------------------------------------------

@dataclass(frozen=True)
class IndependenceReport:
    t: np.ndarray
    scaled_wronskian: np.ndarray
    min_abs: float
    spread: float
    normalized_margin: float
    sign: int


def check_independence(sol1: LinearSolution, sol2: LinearSolution,
                       t_eval: Optional[Sequence[float]] = None,
                       points: int = 41) -> IndependenceReport:
    """Scaled Wronskian ``W(sol1, sol2)(t) e^{(d-4)t}`` on a grid of the common span.

    ``spread`` is ``(max - min) / |mean|``; ``normalized_margin`` is the smallest
    ``|W| / (|g1 g2'| + |g1' g2|)``, which is zero exactly for proportional solutions.
    """
    lo = max(sol1.span[0], sol2.span[0])
    hi = min(sol1.span[1], sol2.span[1])
    if not lo < hi:
        raise NoOverlap("solutions share no span")
    if t_eval is None:
        pad = 0.02 * (hi - lo)
        t_eval = np.linspace(lo + pad, hi - pad, points)
    t = np.asarray(t_eval, dtype=float)
    if t.min() < lo or t.max() > hi:
        raise NoOverlap("evaluation grid leaves the common span")
    y1, d1 = sol1.traj.sample(t)
    y2, d2 = sol2.traj.sample(t)
    d = sol1.params.d
    w_mant = y1 * d2 - d1 * y2
    denom = np.abs(y1 * d2) + np.abs(d1 * y2)
    with np.errstate(invalid="ignore", divide="ignore"):
        margin = np.where(denom > 0, np.abs(w_mant) / denom, 0.0)
    # combine scale exponents in log form to avoid overflow
    logs = sol1.log_scale + sol2.log_scale + (d - 4) * t
    sw = w_mant * np.exp(logs)
    mean = float(np.mean(sw))
    spread = float((sw.max() - sw.min()) / abs(mean)) if mean != 0 else math.inf
    sign = int(np.sign(mean))
    return IndependenceReport(t=t, scaled_wronskian=sw, min_abs=float(np.min(np.abs(sw))),
                              spread=spread, normalized_margin=float(margin.min()), sign=sign)


def tail_sign_constant(sol: LinearSolution, a: float, b: float):
    """``(True, sign)`` iff ``sol`` has no zero for ``t < (a-1) log b``."""
    if not (0 < a < 1) or not b > 1:
        raise ValueError("need a in (0, 1) and b > 1")
    t_cut = (a - 1.0) * math.log(b)
    lo, _ = sol.span
    if lo >= t_cut:
        raise SpanTooShort(f"span starts at {lo:.4g}, above the cut {t_cut:.4g}")
    inside = [z for z in sol.zeros if z.x_star < t_cut]
    x = sol.traj.x
    y = sol.traj.y[x < t_cut]
    sign = int(np.sign(y[np.argmax(np.abs(y))])) if y.size else 0
    return (len(inside) == 0, sign)


# -- perturbation bounds near the singular solution -------------------------------------

@dataclass(frozen=True)
class PerturbationReport:
    eps: tuple
    ratios: tuple
    sups: tuple
    b: float
    a: float
    window: tuple

    @property
    def stability(self) -> float:
        """max/min of the reported ratios (1 for exactly linear response)."""
        r = [x for x in self.ratios if x > 0]
        return max(r) / min(r) if r else math.nan


def _perturbation(singular: SingularState, eps: float, b: float, a: float):
    kappa_m = model.kappa_exponents(singular.d).kappa_minus
    size = eps * b ** (kappa_m * (1 - a))
    return 0.5 * size, 0.5 * size, size


def check_prop22_bound(singular: SingularState, eps_list: Sequence[float] = (1e-4, 2e-4, 4e-4),
                       b: float = 16.0, a: float = 0.3, tol: Tolerances = Tolerances(1e-12, 1e-15),
                       perturbations: Optional[Sequence[tuple[float, float]]] = None
                       ) -> PerturbationReport:
    """``sup |Psi_c - Psi_inf| e^{-kappa_- t} / (eps b^{kappa_-(1-a)})`` over ``[(a-1) log b, 0]``.

    By default each ``eps`` perturbs ``lam`` and ``c`` by half of the allowed
    size ``eps b^{kappa_-(1-a)}`` each.  Explicit ``(lam, c)`` perturbations
    may be passed instead (one per ``eps``).
    """
    d = singular.d
    kappa_m = model.kappa_exponents(d).kappa_minus
    t_lo = (a - 1.0) * math.log(b)
    T = singular.tail_T
    grid = np.linspace(t_lo, 0.0, 201)
    ref = tail_solution(singular.params, singular.c_inf, T, t_lo - 0.1, tol)
    base_vals = ref.sample(grid)[0]
    weight = np.exp(-kappa_m * grid)
    ratios, sups = [], []
    for k, eps in enumerate(eps_list):
        if perturbations is not None:
            lam, c = perturbations[k]
        else:
            dl, dc, _ = _perturbation(singular, eps, b, a)
            lam, c = singular.lam_inf + dl, singular.c_inf + dc
        pert = tail_solution(ProblemParams(d, lam), c, T, t_lo - 0.1, tol)
        diff = np.abs(pert.sample(grid)[0] - base_vals) * weight
        s = float(diff.max())
        sups.append(s)
        ratios.append(s / (eps * b ** (kappa_m * (1 - a))))
    return PerturbationReport(eps=tuple(eps_list), ratios=tuple(ratios), sups=tuple(sups),
                              b=b, a=a, window=(t_lo, 0.0))


def _dc_along(params: ProblemParams, c: float, T: float, t_end: float, tol: Tolerances):
    psi = tail_solution(params, c, T, t_end - 0.1, tol)
    (y0, v0), ls = model.tail_anchor_scaled(params, T)
    rhs = model.variational_rhs(psi, params)
    seg = integrate_linear(rhs, T, (y0, v0), t_end, tol, log_scale=ls)
    traj, ref = _merge(seg)
    return traj, ref


def check_dc_linearity(singular: SingularState, eps_list: Sequence[float] = (1e-4, 2e-4, 4e-4),
                  b: float = 16.0, a: float = 0.3,
                  tol: Tolerances = Tolerances(1e-12, 1e-15)) -> PerturbationReport:
    """``sup |d/dc Psi_c - d/dc Psi_inf| e^{-kappa_- t}`` over ``[(a-1) log b, 0]`` per ``eps``.

    ``ratios`` holds ``sup / eps``; linear response keeps them equal.
    Both derivative families are integrated about the nonlinear solutions
    from the same tail anchor at the singular state's anchor time.
    """
    d = singular.d
    kappa_m = model.kappa_exponents(d).kappa_minus
    t_lo = (a - 1.0) * math.log(b)
    T = singular.tail_T
    grid = np.linspace(t_lo, 0.0, 201)
    weight = np.exp(-kappa_m * grid)
    ref, ls_ref = _dc_along(singular.params, singular.c_inf, T, t_lo, tol)
    ref_vals = ref.sample(grid)[0] * math.exp(ls_ref)
    ratios, sups = [], []
    for eps in eps_list:
        dl, dc, _ = _perturbation(singular, eps, b, a)
        tr, ls = _dc_along(ProblemParams(d, singular.lam_inf + dl), singular.c_inf + dc, T,
                           t_lo, tol)
        vals = tr.sample(grid)[0] * math.exp(ls)
        s = float(np.max(np.abs(vals - ref_vals) * weight))
        sups.append(s)
        ratios.append(s / eps)
    return PerturbationReport(eps=tuple(eps_list), ratios=tuple(ratios), sups=tuple(sups),
                              b=b, a=a, window=(t_lo, 0.0))


# -- large-b comparison of d/db Psi_b with Theta' ----------------------------------------

SHIFTED_START = -9.0


def shifted_db_psi(d: int, b: float, lam: float, s_end: float = 0.0,
                   tol: Tolerances = Tolerances(1e-12, 1e-16)):
    """``Psi_b(s - log b)`` and ``d/db Psi_b(s - log b)`` on ``s in [SHIFTED_START, s_end]``.

    Computed from a regular shot at the given ``lam``; no tail is involved
    because ``s <= 0`` only reaches radii below ``1/b``.  Returns two
    trajectories in the shifted variable ``s``.
    """
    from .shooting import shoot_ef
    params = ProblemParams(d, lam)
    shift = math.log(b)
    t0 = SHIFTED_START - shift
    t1 = s_end - shift
    psi = shoot_ef(params, b, t0, t1, tol)
    start = model.db_series_start(params, b, t0)
    rhs = model.variational_rhs(psi, params)
    seg = integrate_linear(rhs, t0, start, t1, tol)
    db, ls = _merge(seg)
    s = math.exp(ls)
    psi_s = Trajectory(psi.x + shift, psi.y, psi.yp, psi.ypp, kind=psi.kind, rtol=psi.rtol)
    db_s = Trajectory(db.x + shift, db.y * s, db.yp * s, db.ypp * s, kind=db.kind, rtol=db.rtol)
    return psi_s, db_s


@dataclass(frozen=True)
class ScalingReport:
    b: tuple
    errors: tuple
    ratios: tuple
    target: float

    def within(self, lo: float, hi: float) -> bool:
        return all(lo <= r <= hi for r in self.ratios)


def check_db_scaling(d: int, b_list: Sequence[float], lam_list: Sequence[float],
                  theta: Trajectory, s_lo: float = -6.0, points: int = 601) -> ScalingReport:
    """``E(b) = sup_{s in [s_lo, 0]} |d/db Psi_b(s - log b) - Theta'(s) / b|`` and ``E(2b)/E(b)``."""
    grid = np.linspace(s_lo, 0.0, points)
    th_p = theta.sample(grid)[1]
    errs = []
    for b, lam in zip(b_list, lam_list):
        _, db = shifted_db_psi(d, b, lam)
        errs.append(float(np.max(np.abs(db.sample(grid)[0] - th_p / b))))
    ratios = tuple(e2 / e1 for e1, e2 in zip(errs, errs[1:]))
    return ScalingReport(b=tuple(b_list), errors=tuple(errs), ratios=ratios, target=1 / 8)
