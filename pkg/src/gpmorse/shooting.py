"""Shooting in the spectral parameter for ground states and the singular limit.

A shot starts at the small-r series and is classified by its fate: crossing
zero, turning up, or decaying below a scale-proportional threshold.  Bisection
in ``lam`` uses the side of the separatrix each shot falls on; the orientation
is probed at runtime.

Once ``lam`` is bracketed, the profile is trusted only up to the radius where
the two bracket-end shots still agree.  Beyond it the profile is continued by
the decaying tail solution integrated backward from the anchor time ``T``,
with its coefficient ``c`` fixed by matching at that radius.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import model
from .model import ProblemParams, TAIL_T_DEFAULT
from .ode_core import (AbscissaKind, IntegrationError, Tolerances, Trajectory,
                       integrate, refine_events)

log = logging.getLogger(__name__)

DECAY_THRESHOLD = 1e-8
POSITIVITY_FLOOR = 1e-6
BISECTION_TOL = 1e-11
COARSE_SCAN = 32
R_MAX_DEFAULT = 12.0
# relative disagreement of the bracket-end shots tolerated in the trusted span
MATCH_AGREEMENT = 1e-8


class ShootingError(RuntimeError):
    pass


class SameClassAtBracketEnds(ShootingError):
    pass


class NoConvergence(ShootingError):
    pass


class WindowEmpty(ValueError):
    pass


class ShotKind(enum.Enum):
    CROSSED_ZERO = "crossed_zero"
    TURNED_UP = "turned_up"
    DECAYED = "decayed"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class ShotClass:
    """Outcome of one shot.

    ``side`` is the eventual fate used by bisection: -1 for a zero crossing,
    +1 for turning up, 0 if neither was seen.  For ``DECAYED`` shots
    ``residual`` is the smallest ``|profile| / scale`` reached while still
    positive and decreasing, and ``x_star`` the radius where the profile fell
    below the decay threshold.
    """
    kind: ShotKind
    x_star: Optional[float] = None
    side: int = 0
    residual: Optional[float] = None
    reason: str = ""

    @property
    def decided(self) -> bool:
        return self.side != 0


@dataclass
class ShootingConfig:
    tol: Tolerances = field(default_factory=lambda: Tolerances(rtol=1e-10, atol=1e-14))
    r0: Optional[float] = None
    r_max: float = R_MAX_DEFAULT
    bisection_tol: float = BISECTION_TOL
    coarse_points: int = COARSE_SCAN
    tail_T: float = TAIL_T_DEFAULT
    max_bisections: int = 200
    max_polish: int = 24


@dataclass
class GroundState:
    """Converged ground state ``u_b`` at ``lam = lam(b)``.

    ``profile`` holds ``u(r)`` on ``[r0, e^T]``; ``psi`` is the same solution in
    Emden-Fowler form.  ``c_coeff`` is the tail coefficient relative to the
    unit anchor at ``tail_T``.
    """
    d: int
    b: float
    lam: float
    profile: Trajectory
    psi: Trajectory
    c_coeff: float
    bracket: tuple[float, float]
    r0: float
    r_match: float
    tail_T: float
    diagnostics: dict

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.d, self.lam)

    @property
    def bracket_residual(self) -> float:
        return self.bracket[1] - self.bracket[0]

    def u(self, r):
        """``u_b`` at radii ``r``; the leading Gaussian tail is used beyond the span."""
        return _u_with_tail(self.profile, self.params, self.c_coeff, r)


@dataclass
class SingularState:
    """Limiting singular solution at ``lam_inf``; ``profile`` holds ``F = r u_inf``."""
    d: int
    lam_inf: float
    profile: Trajectory
    u_profile: Trajectory
    psi: Trajectory
    c_inf: float
    bracket: tuple[float, float]
    r0: float
    r_match: float
    tail_T: float
    diagnostics: dict

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.d, self.lam_inf)

    @property
    def lam(self) -> float:
        return self.lam_inf

    @property
    def c_coeff(self) -> float:
        return self.c_inf

    def u(self, r):
        return _u_with_tail(self.u_profile, self.params, self.c_inf, r)


def _u_with_tail(profile, params, c, r):
    r = np.asarray(r, dtype=float)
    lo, hi = profile.span
    out = np.empty_like(r)
    inside = r <= hi
    if np.any(inside):
        out[inside] = profile.sample(np.clip(r[inside], lo, hi))[0]
    if np.any(~inside):
        ro = r[~inside]
        # u = Psi / r with the leading c-asymptotics of Psi
        out[~inside] = c * np.exp(model.tail_log_profile(params, np.log(ro))) / ro
    return out if out.ndim else float(out)


# -- single shots ---------------------------------------------------------------

def default_r0(b: float) -> float:
    """Start radius keeping ``b r0 <= 0.01`` so the two-term series stays accurate."""
    return min(model.R0_DEFAULT, 0.01 / max(b, 1e-300))


def start_regular(params: ProblemParams, b: float, r0: Optional[float] = None):
    r0 = default_r0(b) if r0 is None else r0
    return r0, model.series_start_regular(params, b, r0)


def start_singular(params: ProblemParams, r0: Optional[float] = None):
    r0 = model.R0_DEFAULT if r0 is None else r0
    return r0, model.series_start_singular(params, r0)


def _shoot(rhs, x0, state0, r_max, tol, scale):
    """Forward shot, stopped once its fate is evident."""
    seen = {"floor": False}
    lim = 1e4 * scale

    def stop(x, y, yp):
        if y < 0:
            return True
        if yp > 0 and y > POSITIVITY_FLOOR * scale:
            return True
        if y < DECAY_THRESHOLD * scale:
            seen["floor"] = True
        # once decayed, stop as soon as the unstable mode has shown its sign
        if seen["floor"] and yp > 0 and y > 10 * DECAY_THRESHOLD * scale:
            return True
        return abs(y) > lim

    t = replace(tol, blowup_threshold=max(tol.blowup_threshold, 10 * lim))
    return integrate(rhs, x0, state0, r_max, t, stop=stop)


def classify_trajectory(traj: Trajectory, scale: float) -> ShotClass:
    """Classify a forward shot of a positive, decreasing profile of size ``scale``."""
    if not scale > 0 or not np.any(traj.y != 0):
        return ShotClass(ShotKind.UNDETERMINED, reason="zero profile below positivity floor")
    y, yp, x = traj.y, traj.yp, traj.x
    floor = POSITIVITY_FLOOR * scale
    decay = DECAY_THRESHOLD * scale
    neg = np.flatnonzero(y < 0)
    i_cross = neg[0] if neg.size else None
    up = np.flatnonzero((yp > 0) & (y > floor))
    i_up = up[0] if up.size else None
    below = np.flatnonzero((y < decay) & (y > 0))
    i_dec = below[0] if below.size else None

    # eventual side of the separatrix
    side = 0
    if i_cross is not None and (i_up is None or i_cross < i_up):
        side = -1
    elif i_up is not None:
        side = 1
    elif traj.status in ("stopped", "blowup") and y[-1] > 0 and yp[-1] > 0:
        side = 1

    first_bad = min(i for i in (i_cross, i_up, len(y)) if i is not None)
    if i_dec is not None and i_dec < first_bad and np.all(yp[1:i_dec + 1] <= 0):
        pos = y[:first_bad]
        pos = pos[pos > 0]
        resid = float(pos.min() / scale) if pos.size else 0.0
        return ShotClass(ShotKind.DECAYED, x_star=float(x[i_dec]), side=side, residual=resid)
    if side == -1:
        ev = refine_events(traj.restricted(x[0], x[i_cross]) if i_cross >= 1 else traj)
        xs = ev[0].x_star if ev else float(x[i_cross])
        return ShotClass(ShotKind.CROSSED_ZERO, x_star=xs, side=-1)
    if i_up is not None:
        return ShotClass(ShotKind.TURNED_UP, x_star=float(x[i_up]), side=1)
    if side == 1:
        return ShotClass(ShotKind.UNDETERMINED, side=1,
                         reason="turned up below the positivity floor")
    if traj.status == "complete" and y[-1] < decay and yp[-1] < 0:
        return ShotClass(ShotKind.DECAYED, x_star=float(x[-1]), residual=float(y[-1] / scale))
    return ShotClass(ShotKind.UNDETERMINED, reason=f"run ended with status {traj.status}")


def classify_shot(params: ProblemParams, start, config: Optional[ShootingConfig] = None,
                  singular: bool = False, scale: Optional[float] = None,
                  return_trajectory: bool = False):
    """Integrate one shot from ``start = (x0, (y0, y0'))`` and classify it."""
    config = config or ShootingConfig()
    x0, state0 = start
    if scale is None:
        scale = math.sqrt(params.d - 3) if singular else abs(state0[0])
    if scale == 0 and state0[1] == 0:
        cls = ShotClass(ShotKind.UNDETERMINED, reason="zero profile below positivity floor")
        return (cls, None) if return_trajectory else cls
    rhs = model.singular_rhs(params) if singular else model.radial_rhs(params)
    try:
        traj = _shoot(rhs, x0, state0, config.r_max, config.tol, scale)
    except IntegrationError as exc:
        cls = ShotClass(ShotKind.UNDETERMINED, reason=f"{type(exc).__name__}: {exc}")
        return (cls, exc.trajectory) if return_trajectory else cls
    cls = classify_trajectory(traj, scale)
    return (cls, traj) if return_trajectory else cls


# -- bisection ------------------------------------------------------------------

def _bisect(shot_fn, lo_bound, hi_bound, config, label):
    """Coarse scan then bisection on the shot side.  Returns bracket, shots and info."""
    n = config.coarse_points
    # the open bracket is sampled almost to its ends: lam(b) -> d as b -> 0
    eps = 1e-9 * (hi_bound - lo_bound)
    grid = np.linspace(lo_bound + eps, hi_bound - eps, n)
    sides = []
    nshots = 0
    for lam in grid:
        cls, _ = shot_fn(lam)
        nshots += 1
        sides.append(cls.side)
    sides = np.array(sides)
    if np.any(sides == 0):
        bad = grid[sides == 0]
        log.warning("%s: undetermined shots in coarse scan at lam=%s", label, bad)
    known = np.flatnonzero(sides != 0)
    changes = [(known[k], known[k + 1]) for k in range(known.size - 1)
               if sides[known[k]] != sides[known[k + 1]]]
    if not changes:
        raise SameClassAtBracketEnds(
            f"{label}: no change of shot class over the coarse scan of "
            f"({lo_bound}, {hi_bound})")
    if len(changes) > 1:
        log.warning("%s: %d brackets in coarse scan; bisecting the lowest", label, len(changes))
    i, j = changes[0]
    lo, hi = float(grid[i]), float(grid[j])
    s_lo, s_hi = int(sides[i]), int(sides[j])
    orientation = {"low_lambda": s_lo, "high_lambda": s_hi}
    it = 0
    polish = 0
    while True:
        if it >= config.max_bisections:
            raise NoConvergence(f"{label}: bisection did not converge")
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        converged = hi - lo <= config.bisection_tol
        if converged and polish >= config.max_polish:
            break
        it += 1
        cls, _ = shot_fn(mid)
        nshots += 1
        if converged:
            # keep halving until the midpoint shot itself tracks the decaying tail
            polish += 1
            if cls.kind is ShotKind.DECAYED:
                break
        if cls.side == 0:
            if cls.kind is ShotKind.DECAYED:
                lo = hi = mid
                break
            raise NoConvergence(f"{label}: undetermined shot at lam={mid!r}: {cls.reason}")
        if cls.side == s_lo:
            lo = mid
        else:
            hi = mid
    info = {
        "coarse_brackets": [[float(grid[a]), float(grid[b])] for a, b in changes],
        "orientation": orientation,
        "bisections": it,
        "polish_steps": polish,
        "shots": nshots,
    }
    return (lo, hi), 0.5 * (lo + hi) if lo != hi else lo, info


def _trusted_radius(f_lo: Trajectory, f_hi: Trajectory, f_mid: Trajectory) -> float:
    """Largest radius up to which both bracket-end shots agree with the midpoint."""
    hi = min(f_lo.span[1], f_hi.span[1], f_mid.span[1])
    x = f_mid.x[f_mid.x <= hi]
    a = f_lo.sample(x)[0]
    b = f_hi.sample(x)[0]
    m = f_mid.y[: x.size]
    rel = np.abs(a - b) / np.maximum(np.abs(m), 1e-300)
    bad = np.flatnonzero((rel > MATCH_AGREEMENT) | (m <= 0))
    k = bad[0] if bad.size else x.size
    if k < 2:
        raise NoConvergence("bracket-end shots disagree already at the start")
    return float(x[k - 1])


def _tail_psi(params: ProblemParams, c: float, T: float, t_end: float, tol: Tolerances):
    """Backward solution of the Emden-Fowler equation from the c-anchor at ``T``."""
    (y0, yp0), log_s = model.tail_anchor_scaled(params, T)
    S = c * math.exp(log_s)
    c1 = params.d - 4
    c0 = 3 - params.d
    lam = params.lam
    S2 = S * S

    def f(t, y, yp):
        e2 = math.exp(2.0 * t)
        return -c1 * yp - c0 * y - S2 * y * y * y - lam * e2 * y + e2 * e2 * y

    tt = replace(tol, blowup_threshold=1e100)
    traj = integrate(f, T, (y0, yp0), t_end, tt, kind=AbscissaKind.EMDEN_FOWLER_T)
    return traj.scaled(S)


def tail_solution(params: ProblemParams, c: float, T: float = TAIL_T_DEFAULT,
                  t_end: float = 0.0, tol: Optional[Tolerances] = None) -> Trajectory:
    """``Psi_c`` on ``[t_end, T]``, returned in increasing ``t``."""
    tol = tol or ShootingConfig().tol
    return _tail_psi(params, c, T, t_end, tol).reversed()


def match_tail(params: ProblemParams, psi_fwd: Trajectory, t_m: float, T: float,
               tol: Tolerances, max_iter: int = 30):
    """Find ``c`` with ``Psi_c(t_m) = psi_fwd(t_m)``.  Returns ``(c, tail, mismatch)``."""
    target, dtarget = psi_fwd(t_m)
    g = math.exp(float(model.tail_log_profile(params, t_m)))
    c = target / g
    tail = None
    for _ in range(max_iter):
        tail = _tail_psi(params, c, T, t_m - 0.25, tol)
        val = tail(t_m)[0]
        c_new = c * target / val
        if abs(c_new - c) <= 1e-14 * abs(c):
            c = c_new
            break
        c = c_new
    tail = _tail_psi(params, c, T, t_m - 0.25, tol)
    val, dval = tail(t_m)
    mismatch = abs(dval - dtarget) / max(abs(dtarget), 1e-300)
    return c, tail.reversed(), mismatch


def _assemble(params, psi_fwd, t_m, T, tol):
    c, tail, mismatch = match_tail(params, psi_fwd, t_m, T, tol)
    head = psi_fwd.restricted(psi_fwd.span[0], t_m)
    tail_part = tail.restricted(t_m, T)
    psi = Trajectory.join(head, tail_part)
    return c, psi, mismatch


def _shot_fn(params_of, start_of, config, singular, scale):
    def fn(lam):
        p = params_of(lam)
        return classify_shot(p, start_of(p), config, singular=singular, scale=scale,
                             return_trajectory=True)
    return fn


def solve_lambda(d: int, b: float, config: Optional[ShootingConfig] = None) -> GroundState:
    """Ground state of amplitude ``b``: ``lam(b)`` by bisection on ``(d-4, d)``."""
    config = config or ShootingConfig()
    if d < 4:
        raise ValueError("ground states are computed for d >= 4")
    if not b > 0:
        raise ValueError("amplitude b must be positive")
    r0 = config.r0 if config.r0 is not None else default_r0(b)

    def start_of(p):
        return r0, model.series_start_regular(p, b, r0)

    fn = _shot_fn(lambda lam: ProblemParams(d, lam), start_of, config, False, b)
    (lo, hi), lam, info = _bisect(fn, d - 4.0, float(d), config, f"lam(b={b})")
    params = ProblemParams(d, lam)
    _, f_mid = fn(lam)
    _, f_lo = fn(lo)
    _, f_hi = fn(hi)
    final = classify_trajectory(f_mid, b)
    r_m = _trusted_radius(f_lo, f_hi, f_mid)
    T = min(config.tail_T, math.log(config.r_max))
    psi_fwd = model.ef_forward(f_mid.restricted(r0, r_m))
    c, psi, mismatch = _assemble(params, psi_fwd, math.log(r_m), T, config.tol)
    profile = model.ef_inverse(psi)
    info.update(final_class=final.kind.value, final_residual=final.residual,
                derivative_mismatch=mismatch, rtol=config.tol.rtol, atol=config.tol.atol,
                r_max=config.r_max)
    return GroundState(d=d, b=float(b), lam=lam, profile=profile, psi=psi, c_coeff=c,
                       bracket=(lo, hi), r0=r0, r_match=r_m, tail_T=T, diagnostics=info)


def solve_lambda_inf(d: int, config: Optional[ShootingConfig] = None) -> SingularState:
    """Limiting singular solution: ``lam_inf`` by bisection with the singular start."""
    config = config or ShootingConfig()
    ProblemParams(d, 0.0).require_singular()
    r0 = config.r0 if config.r0 is not None else model.R0_DEFAULT
    scale = math.sqrt(d - 3)

    def start_of(p):
        return r0, model.series_start_singular(p, r0)

    fn = _shot_fn(lambda lam: ProblemParams(d, lam), start_of, config, True, scale)
    (lo, hi), lam, info = _bisect(fn, d - 4.0, float(d), config, "lam_inf")
    params = ProblemParams(d, lam)
    _, F_mid = fn(lam)
    _, F_lo = fn(lo)
    _, F_hi = fn(hi)
    final = classify_trajectory(F_mid, scale)
    r_m = _trusted_radius(F_lo, F_hi, F_mid)
    T = min(config.tail_T, math.log(config.r_max))
    psi_fwd = model.radial_to_ef_F(F_mid.restricted(r0, r_m))
    c, psi, mismatch = _assemble(params, psi_fwd, math.log(r_m), T, config.tol)
    # F(r) = Psi(log r), F'(r) = Psi'/r
    r = np.exp(psi.x)
    F = psi.y
    Fp = psi.yp / r
    Fpp = (psi.ypp - psi.yp) / (r * r)
    Fprof = Trajectory(r, F, Fp, Fpp, kind=AbscissaKind.RADIAL_R, rtol=psi.rtol)
    info.update(final_class=final.kind.value, final_residual=final.residual,
                derivative_mismatch=mismatch, rtol=config.tol.rtol, atol=config.tol.atol,
                r_max=config.r_max)
    return SingularState(d=d, lam_inf=lam, profile=Fprof, u_profile=model.F_to_u(Fprof),
                         psi=psi, c_inf=c, bracket=(lo, hi), r0=r0, r_match=r_m, tail_T=T,
                         diagnostics=info)


def shoot_ef(params: ProblemParams, b: float, t0: float, t1: float,
             tol: Optional[Tolerances] = None) -> Trajectory:
    """Regular shot integrated directly in Emden-Fowler variables."""
    tol = tol or ShootingConfig().tol
    start = model.series_start_regular_ef(params, b, t0)
    return integrate(model.ef_rhs(params), t0, start, t1,
                     replace(tol, blowup_threshold=1e100), kind=AbscissaKind.EMDEN_FOWLER_T)


# -- tail coefficient -------------------------------------------------------------

def extract_c(profile: Trajectory, params: ProblemParams, spread: float = 0.01) -> float:
    """Tail coefficient as the median of ``Psi / (leading asymptotics)`` over a window.

    The window is the longest run of samples whose magnitude exceeds
    ``1e3 * eps * max|Psi|`` and over which the ratio varies by less than
    ``spread`` (relative).  ``profile`` may be in ``t`` (``Psi``) or in ``r`` (``u``).
    """
    if profile.kind is AbscissaKind.RADIAL_R:
        t = np.log(profile.x)
        psi = profile.x * profile.y
    else:
        t = profile.x
        psi = profile.y
    order = np.argsort(t)
    t, psi = t[order], psi[order]
    amax = np.max(np.abs(psi)) if psi.size else 0.0
    if amax == 0:
        raise WindowEmpty("profile is identically zero")
    ok = np.abs(psi) > 1e3 * np.finfo(float).eps * amax
    ratio = np.full_like(psi, np.nan)
    ratio[ok] = psi[ok] / np.exp(model.tail_log_profile(params, t[ok]))
    # scan windows anchored at the far end, then shrink from the far end
    best = None
    n = t.size
    for end in range(n - 1, 0, -1):
        if not ok[end]:
            continue
        lo = end
        rmin = rmax = ratio[end]
        while lo - 1 >= 0 and ok[lo - 1]:
            cand = ratio[lo - 1]
            nmin, nmax = min(rmin, cand), max(rmax, cand)
            if (nmax - nmin) > spread * min(abs(nmin), abs(nmax)) or nmin * nmax <= 0:
                break
            rmin, rmax = nmin, nmax
            lo -= 1
        if end - lo + 1 >= 3 and (best is None or t[end] - t[lo] > best[1] - best[0]):
            best = (t[lo], t[end], lo, end)
        if best is not None and lo == 0:
            break
    if best is None:
        raise WindowEmpty("no window with a stable tail ratio")
    return float(np.median(ratio[best[2]:best[3] + 1]))


# -- curves ---------------------------------------------------------------------

class Regime(enum.Enum):
    MONOTONE = "monotone"
    OSCILLATORY = "oscillatory"


def classify_regime(d: int) -> Regime:
    """Monotone iff the exponents at the stable point are real, i.e. ``d > 8 + 2 sqrt 6``."""
    disc = d * d - 16 * d + 40
    return Regime.MONOTONE if (disc > 0 and d > 8 + 2 * math.sqrt(6)) else Regime.OSCILLATORY


@dataclass(frozen=True)
class CurvePoint:
    b: float
    lam: float
    mass: float
    energy: float
    morse: Optional[int] = None


def _curve_task(args):
    d, b, config, with_morse = args
    from . import observables, linearization
    gs = solve_lambda(d, b, config)
    morse = None
    if with_morse:
        morse = linearization.morse_index(linearization.solve_dc_psi(gs))
    return CurvePoint(float(b), gs.lam, observables.mass(gs), observables.energy(gs), morse)


def sweep_curve(d: int, b_grid: Sequence[float], config: Optional[ShootingConfig] = None,
                with_morse: bool = False, workers: int = 1):
    """One :class:`CurvePoint` per amplitude.  Failures are logged and returned
    as ``(b, error message)`` entries in the second list."""
    b_grid = [float(b) for b in b_grid]
    if any(b <= 0 for b in b_grid):
        raise ValueError("amplitudes must be positive")
    if any(b2 < b1 for b1, b2 in zip(b_grid, b_grid[1:])):
        raise ValueError("amplitude grid must be sorted")
    config = config or ShootingConfig()
    tasks = [(d, b, config, with_morse) for b in b_grid]
    results = []
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_curve_task, t) for t in tasks]
            for b, fut in zip(b_grid, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded per point
                    results.append((b, f"{type(exc).__name__}: {exc}"))
    else:
        for t in tasks:
            try:
                results.append(_curve_task(t))
            except Exception as exc:  # noqa: BLE001 - recorded per point
                log.warning("sweep: b=%s failed: %s", t[1], exc)
                results.append((t[1], f"{type(exc).__name__}: {exc}"))
    points = [p for p in results if isinstance(p, CurvePoint)]
    failures = [p for p in results if not isinstance(p, CurvePoint)]
    return points, failures
