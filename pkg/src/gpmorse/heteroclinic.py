"""Heteroclinic orbit of the truncated equation and the asymptotic constants.

``Theta`` connects ``(0, 0)`` to the stable point ``(sqrt(d-3), 0)`` of the
autonomous truncation.  For ``d >= 13`` the exponents ``kappa_pm`` at that
point are real and negative, so

* ``Theta(t) - sqrt(d-3) ~ A0 e^{kappa_+ t}`` as ``t -> +inf``;
* ``d/dc Psi_inf(t) ~ Linf e^{kappa_- t}`` as ``t -> -inf``.

Both constants are measured by two-exponential least squares.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import model
from .linearization import LinearSolution, LinearKind, shifted_db_psi, solve_db_psi, solve_dc_psi
from .ode_core import AbscissaKind, Tolerances, Trajectory, integrate

log = logging.getLogger(__name__)

THETA_TOL = Tolerances(rtol=1e-12, atol=1e-15)
THETA_SWITCH = 1.0
A0_WINDOW = (3.0, 6.0)
LINF_WINDOW = (-6.5, -4.0)
FIT_RESIDUAL_MAX = 1e-4
# the neglected quadratic terms must stay below this fraction of the signal
SHRINK_FRACTION = 1e-3
CONDITIONING_CAP = 1e8


class NonConvergence(RuntimeError):
    pass


class SignalBelowNoise(ValueError):
    pass


class PrerequisiteFitMissing(ValueError):
    pass


@dataclass(frozen=True)
class Unsupported:
    """Returned by the asymptotic fits outside the monotone regime."""
    d: int
    reason: str


class HeteroclinicOrbit(Trajectory):
    """``Theta`` on ``[t_min, t_max]``; ``deviation`` holds ``Theta - sqrt(d-3)``
    integrated directly (relative accuracy) from ``THETA_SWITCH`` on."""

    def __init__(self, traj: Trajectory, deviation: Optional[Trajectory], d: int):
        super().__init__(traj.x, traj.y, traj.yp, traj.ypp, kind=traj.kind,
                         status=traj.status, nfev=traj.nfev, rtol=traj.rtol)
        self.deviation = deviation
        self.d = d

    @property
    def monotone(self) -> bool:
        """Observed monotonicity (recorded, not asserted)."""
        return bool(np.all(self.yp > 0))


def _require_monotone(d: int):
    ex = model.kappa_exponents(d)
    if not ex.is_real or d < 13:
        return Unsupported(d, "complex exponents at the stable point (oscillatory regime)")
    return None


def solve_theta(d: int, t_min: float = -12.0, t_max: float = 10.0,
                tol: Tolerances = THETA_TOL, switch: float = THETA_SWITCH) -> HeteroclinicOrbit:
    """Forward integration from the anchor ``e^t - e^{3t}/(2d)`` at ``t_min``."""
    if d < 13:
        raise ValueError("the heteroclinic orbit is computed for d >= 13")
    if t_min > -10:
        raise ValueError("t_min must be <= -10 for the series anchor")
    s = math.sqrt(d - 3)
    head = integrate(model.theta_rhs(d), t_min, model.theta_series_start(d, t_min),
                     min(switch, t_max), tol, kind=AbscissaKind.EMDEN_FOWLER_T)
    dev = None
    traj = head
    if t_max > switch:
        y, v = float(head.y[-1]), float(head.yp[-1])
        dev = integrate(model.theta_deviation_rhs(d), switch, (y - s, v), t_max,
                        replace(tol, atol=1e-300),
                        kind=AbscissaKind.EMDEN_FOWLER_T)
        tail = Trajectory(dev.x, dev.y + s, dev.yp, dev.ypp, kind=dev.kind, rtol=dev.rtol)
        traj = Trajectory.join(head, tail)
    end = abs(traj.y[-1] - s)
    if end > 1e-6:
        raise NonConvergence(f"|Theta(t_max) - sqrt(d-3)| = {end:.3g}; increase t_max")
    orbit = HeteroclinicOrbit(traj, dev, d)
    if not orbit.monotone:
        log.info("Theta is not monotone on the computed span")
    return orbit


# -- fitting ---------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Amplitudes for the basis ``{e^{k1 t}, e^{k2 t}}`` on ``window``.

    ``residual`` is the relative least-squares misfit; ``conditioning`` the
    condition number of the column-normalised basis matrix.
    ``free_exponents`` are the exponents of an unconstrained fit of the same
    model; ``window_sensitivity`` the largest relative change of the leading
    coefficient when the window is shifted by +-0.5.
    """
    coefficients: tuple[float, float]
    exponents: tuple[float, float]
    window: tuple[float, float]
    residual: float
    conditioning: float
    free_exponents: Optional[tuple[float, float]] = None
    free_leading: Optional[float] = None
    window_sensitivity: Optional[float] = None

    @property
    def leading(self) -> float:
        return self.coefficients[0]

    @property
    def accepted(self) -> bool:
        return self.residual < FIT_RESIDUAL_MAX and self.conditioning < CONDITIONING_CAP


def fit_two_exponential(t, y, k1: float, k2: float):
    """Linear least squares for ``y ~ A e^{k1 t} + B e^{k2 t}``.  Returns (A, B, resid, cond)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    basis = np.column_stack([np.exp(k1 * t), np.exp(k2 * t)])
    norms = np.linalg.norm(basis, axis=0)
    coef, *_ = np.linalg.lstsq(basis / norms, y, rcond=None)
    coef = coef / norms
    resid = float(np.linalg.norm(basis @ coef - y) / np.linalg.norm(y))
    cond = float(np.linalg.cond(basis / norms))
    return float(coef[0]), float(coef[1]), resid, cond


def fit_free_exponents(t, y, k1: float, k2: float):
    """Nonlinear fit of ``A e^{a t} + B e^{b t}`` started from ``(k1, k2)``.

    Residuals are relative to ``|y|`` so every sample counts.  Returns the
    fitted ``(a, b)`` and ``A``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    A, B, _, _ = fit_two_exponential(t, y, k1, k2)
    tc = 0.5 * (t[0] + t[-1])
    w = 1.0 / np.abs(y)

    # amplitudes referred to the window centre keep the problem well scaled
    def res(p):
        a, b, ca, cb = p
        return (ca * np.exp(a * (t - tc)) + cb * np.exp(b * (t - tc)) - y) * w

    p0 = [k1, k2, A * math.exp(k1 * tc), B * math.exp(k2 * tc)]
    sol = least_squares(res, p0, x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=2000)
    a, b, ca, _ = sol.x
    return (float(a), float(b)), float(ca * math.exp(-a * tc))


def _grid_values(traj: Trajectory, window, n=241, offset=0.0, scale=1.0):
    t = np.linspace(window[0], window[1], n)
    return t, (traj.sample(t)[0] - offset) * scale


def _second_order_coeff(d: int, kappa: float) -> float:
    """Coefficient ``q`` of ``q A^2 e^{2 kappa t}`` in the expansion of ``Theta - sqrt(d-3)``."""
    den = 4 * kappa * kappa + 2 * kappa * (d - 4) + 2 * (d - 3)
    return -3.0 * math.sqrt(d - 3) / den


def _theta_data(theta: Trajectory, d: int, window, n=241):
    s = math.sqrt(d - 3)
    dev = getattr(theta, "deviation", None)
    if dev is not None and dev.span[0] <= window[0] and window[1] <= dev.span[1]:
        return _grid_values(dev, window, n)
    return _grid_values(theta, window, n, offset=s)


def fit_A0(theta: Trajectory, d: int, window: tuple[float, float] = A0_WINDOW,
           noise: float = 1e-15, shrink_step: float = 0.25):
    """``A0`` as the ``e^{kappa_+ t}`` coefficient of ``Theta - sqrt(d-3)`` on ``window``.

    The lower end of the window moves up until the neglected quadratic
    terms (``e^{2 kappa_+ t}`` and its companions) are below
    ``SHRINK_FRACTION`` of the fitted signal.
    """
    bad = _require_monotone(d)
    if bad is not None:
        return bad
    ex = model.kappa_exponents(d)
    kp, km = float(ex.kappa_plus), float(ex.kappa_minus)
    lo, hi = window
    t, y = _theta_data(theta, d, (lo, hi))
    if np.max(np.abs(y)) < 10 * max(noise, 1e-300):
        raise SignalBelowNoise("Theta is already at the fixed point over the window")
    q = _second_order_coeff(d, kp)
    while True:
        t, y = _theta_data(theta, d, (lo, hi))
        A, B, resid, cond = fit_two_exponential(t, y, kp, km)
        signal = abs(A * math.exp(kp * lo) + B * math.exp(km * lo))
        # all quadratic terms (A^2, AB, B^2) of the expansion, estimated together
        amp = abs(A) + abs(B) * math.exp((km - kp) * lo)
        neglected = abs(q) * amp * amp * math.exp(2 * kp * lo)
        if neglected < SHRINK_FRACTION * signal or hi - lo <= 2 * shrink_step:
            break
        lo += shrink_step
    free, free_lead = fit_free_exponents(t, y, kp, km)
    sens = 0.0
    for shift in (-0.5, 0.5):
        w = (lo + shift, hi + shift)
        if w[0] < theta.span[0] or w[1] > theta.span[1]:
            continue
        ts, ys = _theta_data(theta, d, w)
        A2, *_ = fit_two_exponential(ts, ys, kp, km)
        sens = max(sens, abs(A2 - A) / abs(A))
    return FitResult((A, B), (kp, km), (lo, hi), resid, cond, free, free_lead, sens)


def _linear_data(sol: LinearSolution, window, n=241):
    t = np.linspace(window[0], window[1], n)
    y = sol.traj.sample(t)[0] * math.exp(sol.log_scale)
    return t, y


def fit_Linf(dc_psi_inf: LinearSolution, d: int,
             window: Optional[tuple[float, float]] = None, noise: float = 1e-300):
    """``Linf`` as the ``e^{kappa_- t}`` coefficient of ``d/dc Psi_inf`` at large negative ``t``.

    The default window is ``LINF_WINDOW`` clipped to the span; its upper end
    is lowered until the relative ``e^{2t}`` correction is below 1%.
    """
    bad = _require_monotone(d)
    if bad is not None:
        return bad
    if dc_psi_inf.kind is not LinearKind.DC_PSI_INF:
        raise ValueError("fit_Linf needs the d/dc solution about the singular state")
    ex = model.kappa_exponents(d)
    kp, km = float(ex.kappa_plus), float(ex.kappa_minus)
    lo_span = dc_psi_inf.span[0]
    if window is None:
        lo = max(LINF_WINDOW[0], lo_span + 0.25)
        hi = min(LINF_WINDOW[1], 0.5 * math.log(0.01))
        window = (lo, hi)
    if window[0] < lo_span or window[1] > dc_psi_inf.span[1]:
        raise ValueError("fit window outside the solution span")
    t, y = _linear_data(dc_psi_inf, window)
    if np.max(np.abs(y)) < 10 * noise:
        raise SignalBelowNoise("solution below the noise floor over the window")
    # basis order: leading (kappa_-) first
    L, B, resid, cond = fit_two_exponential(t, y, km, kp)
    free, free_lead = fit_free_exponents(t, y, km, kp)
    sens = 0.0
    for shift in (-0.5, 0.5):
        w = (window[0] + shift, window[1] + shift)
        if w[0] < lo_span or w[1] > dc_psi_inf.span[1]:
            continue
        ts, ys = _linear_data(dc_psi_inf, w)
        L2, *_ = fit_two_exponential(ts, ys, km, kp)
        sens = max(sens, abs(L2 - L) / abs(L))
    return FitResult((L, B), (km, kp), tuple(window), resid, cond, free, free_lead, sens)


def log_slope(t, y) -> float:
    """Least-squares slope of ``log|y|`` against ``t``."""
    t = np.asarray(t, dtype=float)
    return float(np.polyfit(t, np.log(np.abs(np.asarray(y, dtype=float))), 1)[0])


def a0_threshold(d: int):
    """``a0 = 2 / (2 + |kappa_+|)``."""
    bad = _require_monotone(d)
    if bad is not None:
        return bad
    return 2.0 / (2.0 + abs(float(model.kappa_exponents(d).kappa_plus)))


# -- convergence-rate checks ---------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    b: tuple
    errors: tuple
    ratios: tuple
    target: float
    window: tuple

    def within(self, lo: float, hi: float) -> bool:
        return all(lo <= r <= hi for r in self.ratios)


def check_prop21(d: int, b_list: Sequence[float], lam_list: Sequence[float],
                 theta: Optional[Trajectory] = None, s_lo: float = -4.0,
                 points: int = 401) -> RateReport:
    """``E(b) = sup_{s in [s_lo, 0]} |Psi_b(s - log b) - Theta(s)| e^{-3s}`` and ``E(2b)/E(b)``.

    ``lam_list`` gives ``lam(b)`` for each amplitude.
    """
    theta = theta or solve_theta(d)
    grid = np.linspace(s_lo, 0.0, points)
    th = theta.sample(grid)[0]
    w = np.exp(-3.0 * grid)
    errs = []
    for b, lam in zip(b_list, lam_list):
        psi, _ = shifted_db_psi(d, b, lam)
        errs.append(float(np.max(np.abs(psi.sample(grid)[0] - th) * w)))
    ratios = tuple(e2 / e1 for e1, e2 in zip(errs, errs[1:]))
    return RateReport(tuple(b_list), tuple(errs), ratios, 0.25, (s_lo, 0.0))


@dataclass(frozen=True)
class PredictionReport:
    b: tuple
    values: tuple
    predictions: tuple
    deviations: tuple
    conclusive: bool
    T: float
    a: float

    @property
    def decreasing(self) -> bool:
        return all(x2 < x1 for x1, x2 in zip(self.deviations, self.deviations[1:]))


def check_cor32(grounds: Sequence, A0: Optional[float], T: float = 1.0,
                a: float = 0.2) -> PredictionReport:
    """``d/db Psi_b(T + (a-1) log b)`` against ``A0 kappa_+ b^{a kappa_+ - 1} e^{kappa_+ T}``."""
    if A0 is None:
        raise PrerequisiteFitMissing("A0 has not been fitted")
    d = grounds[0].d
    kp = float(model.kappa_exponents(d).kappa_plus)
    a0 = a0_threshold(d)
    vals, preds, devs = [], [], []
    for gs in grounds:
        t = T + (a - 1) * math.log(gs.b)
        db = solve_db_psi(gs)
        v = db.value(t)[0]
        p = A0 * kp * gs.b ** (a * kp - 1) * math.exp(kp * T)
        vals.append(v)
        preds.append(p)
        devs.append(abs(v - p) / abs(p))
    return PredictionReport(tuple(g.b for g in grounds), tuple(vals), tuple(preds), tuple(devs),
                           isinstance(a0, float) and a < a0, T, a)


def check_cor42(grounds: Sequence, Linf: Optional[float], T: float = 1.0, a: float = 0.3,
                eps: float = 1e-4) -> PredictionReport:
    """``d/dc Psi_c(b)(T + (a-1) log b)`` against ``Linf e^{kappa_- T} b^{-kappa_-(1-a)}``.

    ``eps`` is recorded only; it sets the size of the admissible error term.
    """
    if Linf is None:
        raise PrerequisiteFitMissing("Linf has not been fitted")
    d = grounds[0].d
    km = float(model.kappa_exponents(d).kappa_minus)
    vals, preds, devs = [], [], []
    for gs in grounds:
        t = T + (a - 1) * math.log(gs.b)
        dc = solve_dc_psi(gs)
        v = dc.value(t)[0]
        p = Linf * math.exp(km * T) * gs.b ** (-km * (1 - a))
        vals.append(v)
        preds.append(p)
        devs.append(abs(v - p) / abs(p))
    return PredictionReport(tuple(g.b for g in grounds), tuple(vals), tuple(preds), tuple(devs),
                           0 < a < 1, T, a)
