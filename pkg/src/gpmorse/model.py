"""Right-hand sides, series starts, tail anchors and Emden-Fowler maps.

All equations are for the cubic nonlinearity.  Radial variables use ``r``;
Emden-Fowler variables use ``t = log r`` with ``Psi(t) = r u(r)``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .ode_core import AbscissaKind, OutOfSpan, Trajectory

R0_DEFAULT = 1e-3
R0_MAX = 0.05
# e^{2T}/2 = 34
TAIL_T_DEFAULT = 0.5 * math.log(68.0)


@dataclass(frozen=True)
class ProblemParams:
    """Dimension ``d`` and spectral parameter ``lam``; the power is fixed to cubic."""
    d: int
    lam: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def power(self) -> int:
        return 1

    def with_lambda(self, lam: float) -> "ProblemParams":
        return ProblemParams(self.d, lam)

    def require_singular(self):
        if self.d < 5:
            raise ValueError("singular-solution routines need d >= 5")

    def require_monotone(self):
        if self.d < 13:
            raise ValueError("monotone-regime routines need d >= 13")


@dataclass(frozen=True)
class ExponentPair:
    kappa_plus: Union[float, complex]
    kappa_minus: Union[float, complex]
    discriminant: int

    @property
    def is_real(self) -> bool:
        return self.discriminant >= 0


def kappa_exponents(d: int) -> ExponentPair:
    """Characteristic exponents of the linearisation at ``(sqrt(d-3), 0)``."""
    disc = d * d - 16 * d + 40
    half = -0.5 * (d - 4)
    if disc >= 0:
        root = 0.5 * math.sqrt(disc)
        return ExponentPair(half + root, half - root, disc)
    root = 0.5 * cmath.sqrt(disc)
    return ExponentPair(half + root, half - root, disc)


# -- right-hand sides ------------------------------------------------------------

def rhs_regular_radial(params: ProblemParams, r: float, f: float, fp: float) -> float:
    if r <= 0:
        raise ValueError("r must be positive; start from series_start_regular")
    return -(params.d - 1) / r * fp + (r * r - params.lam) * f - f * f * f


def rhs_singular_radial(params: ProblemParams, r: float, F: float, Fp: float) -> float:
    if r <= 0:
        raise ValueError("r must be positive; start from series_start_singular")
    dm3 = params.d - 3
    r2 = r * r
    return -dm3 / r * Fp + F * (dm3 - F * F) / r2 + (r2 - params.lam) * F


def rhs_ef(params: ProblemParams, t: float, psi: float, psip: float) -> float:
    e2 = math.exp(2.0 * t)
    d = params.d
    return (-(d - 4) * psip - (3 - d) * psi - psi * psi * psi
            - params.lam * e2 * psi + e2 * e2 * psi)


def rhs_theta(d: int, t: float, th: float, thp: float) -> float:
    return -(d - 4) * thp - (3 - d) * th - th * th * th


def radial_rhs(params: ProblemParams) -> Callable[[float, float, float], float]:
    d1 = params.d - 1
    lam = params.lam

    def f(r, y, yp):
        return -d1 / r * yp + (r * r - lam) * y - y * y * y
    return f


def singular_rhs(params: ProblemParams) -> Callable[[float, float, float], float]:
    dm3 = params.d - 3
    lam = params.lam

    def f(r, F, Fp):
        r2 = r * r
        return -dm3 / r * Fp + F * (dm3 - F * F) / r2 + (r2 - lam) * F
    return f


def ef_rhs(params: ProblemParams) -> Callable[[float, float, float], float]:
    c1 = params.d - 4
    c0 = 3 - params.d
    lam = params.lam

    def f(t, y, yp):
        e2 = math.exp(2.0 * t)
        return -c1 * yp - c0 * y - y * y * y - lam * e2 * y + e2 * e2 * y
    return f


def theta_rhs(d: int) -> Callable[[float, float, float], float]:
    c1 = d - 4
    c0 = 3 - d

    def f(t, y, yp):
        return -c1 * yp - c0 * y - y * y * y
    return f


def theta_deviation_rhs(d: int) -> Callable[[float, float, float], float]:
    """Truncated equation for ``delta = Theta - sqrt(d-3)``.

    Keeps relative accuracy in ``delta`` once Theta sits near the stable point.
    """
    c1 = d - 4
    k0 = 2.0 * (d - 3)
    s3 = 3.0 * math.sqrt(d - 3)

    def f(t, y, yp):
        return -c1 * yp - k0 * y - s3 * y * y - y * y * y
    return f


def variational_rhs(base: Trajectory, params: ProblemParams, tail=None):
    """``gamma'' = -(d-4) gamma' - [(3-d) + 3 Psi^2 + lam e^{2t} - e^{4t}] gamma``.

    ``Psi`` comes from the frozen dense output of ``base`` (t variable);
    ``tail(t)``, if given, supplies ``Psi`` beyond the end of the base span.
    """
    if base.kind is not AbscissaKind.EMDEN_FOWLER_T:
        raise ValueError("variational equation needs a base trajectory in t")
    c1 = params.d - 4
    c0 = 3 - params.d
    lam = params.lam
    lo, hi = base.span

    def f(t, g, gp):
        if t > hi and tail is not None:
            psi = tail(t)
        elif t < lo - 1e-9 or t > hi + 1e-9:
            raise OutOfSpan(f"t={t} outside base span [{lo}, {hi}]")
        else:
            psi = base(min(max(t, lo), hi))[0]
        e2 = math.exp(2.0 * t)
        return -c1 * gp - (c0 + 3.0 * psi * psi + lam * e2 - e2 * e2) * g
    return f


def rhs_variational(base: Trajectory, params: ProblemParams, t: float,
                    g: float, gp: float) -> float:
    return variational_rhs(base, params)(t, g, gp)


def radial_linear_rhs(profile: Trajectory, params: ProblemParams, tail=None, u_is_F=False):
    """Right-hand side of ``L v = 0`` in ``r``: ``v'' = -(d-1)/r v' + (r^2 - lam - 3u^2) v``.

    ``tail(r)`` supplies ``u`` beyond the profile span; if ``u_is_F`` the
    profile holds ``F = r u`` instead of ``u``.
    """
    d1 = params.d - 1
    lam = params.lam
    lo, hi = profile.span

    def f(r, v, vp):
        if r > hi:
            if tail is None:
                raise OutOfSpan(f"r={r} beyond profile span")
            u = tail(r)
        else:
            u = profile(max(r, lo))[0]
            if u_is_F:
                u /= r
        return -d1 / r * vp + (r * r - lam - 3.0 * u * u) * v
    return f


# -- starts and anchors ------------------------------------------------------------

def _check_r0(r0: float):
    if not (0 < r0 <= R0_MAX):
        raise ValueError(f"r0 must lie in (0, {R0_MAX}], got {r0}")


def series_start_regular(params: ProblemParams, b: float, r0: float = R0_DEFAULT):
    """``(f, f')`` at ``r0`` from the small-r series of the regular shot."""
    _check_r0(r0)
    k = params.lam * b + b ** 3
    return b - k * r0 * r0 / (2 * params.d), -k * r0 / params.d


def series_start_singular(params: ProblemParams, r0: float = R0_DEFAULT):
    """``(F, F')`` at ``r0`` from the small-r series of ``F = r u_inf``."""
    _check_r0(r0)
    s = math.sqrt(params.d - 3)
    lam = params.lam
    return s * (1 - lam * r0 * r0 / (4 * params.d - 10)), -s * lam * r0 / (2 * params.d - 5)


def series_start_regular_ef(params: ProblemParams, b: float, t0: float):
    """``(Psi_b, Psi_b')`` at ``t0`` (same series as :func:`series_start_regular`)."""
    _check_r0(math.exp(t0))
    k = (params.lam * b + b ** 3) / (2 * params.d)
    e1, e3 = math.exp(t0), math.exp(3 * t0)
    return b * e1 - k * e3, b * e1 - 3 * k * e3


def series_start_singular_ef(params: ProblemParams, t0: float):
    _check_r0(math.exp(t0))
    s = math.sqrt(params.d - 3)
    k = params.lam / (4 * params.d - 10)
    e2 = math.exp(2 * t0)
    return s * (1 - k * e2), -2 * s * k * e2


def db_series_start(params: ProblemParams, b: float, t0: float):
    """``(d/db Psi_b, its t-derivative)`` at ``t0``, lambda held fixed."""
    k = (params.lam + 3 * b * b) / (2 * params.d)
    e1, e3 = math.exp(t0), math.exp(3 * t0)
    return e1 - k * e3, e1 - 3 * k * e3


def theta_series_start(d: int, t0: float):
    e1, e3 = math.exp(t0), math.exp(3 * t0)
    return e1 - e3 / (2 * d), e1 - 3 * e3 / (2 * d)


def tail_exponent(params: ProblemParams) -> float:
    return 0.5 * (params.lam - params.d + 2)


def tail_log_profile(params: ProblemParams, t):
    """``log`` of the leading decaying tail ``e^{(lam-d+2)t/2} e^{-e^{2t}/2}``."""
    return tail_exponent(params) * t - 0.5 * np.exp(2 * np.asarray(t, dtype=float))


def tail_anchor(params: ProblemParams, c: float, T: float = TAIL_T_DEFAULT):
    """Leading decaying asymptotics ``(Psi, Psi')`` at ``t = T``."""
    if not (0.5 <= T <= 4.0):
        raise ValueError(f"tail anchor T={T} outside validated range [0.5, 4]")
    psi = c * math.exp(float(tail_log_profile(params, T)))
    return psi, psi * (tail_exponent(params) - math.exp(2 * T))


def tail_anchor_scaled(params: ProblemParams, T: float = TAIL_T_DEFAULT):
    """Unit-c anchor split as (mantissa state, log scale): state * exp(log_scale)."""
    if not (0.5 <= T <= 4.0):
        raise ValueError(f"tail anchor T={T} outside validated range [0.5, 4]")
    log_scale = float(tail_log_profile(params, T))
    return (1.0, tail_exponent(params) - math.exp(2 * T)), log_scale


# -- Emden-Fowler transformation -----------------------------------------------------

def ef_forward(profile: Trajectory) -> Trajectory:
    """``u(r)`` samples to ``Psi(t) = e^t u(e^t)`` samples (with derivatives)."""
    if profile.kind is not AbscissaKind.RADIAL_R:
        raise ValueError("ef_forward expects a trajectory in r")
    r = profile.x
    if np.any(r <= 0):
        raise ValueError("Emden-Fowler transformation needs positive radii")
    u, up, upp = profile.y, profile.yp, profile.ypp
    psi = r * u
    psip = r * u + r * r * up
    psipp = r * u + 3 * r * r * up + r ** 3 * upp
    return Trajectory(np.log(r), psi, psip, psipp, kind=AbscissaKind.EMDEN_FOWLER_T,
                      status=profile.status, nfev=profile.nfev, rtol=profile.rtol)


def ef_inverse(psi: Trajectory) -> Trajectory:
    """Inverse of :func:`ef_forward`."""
    if psi.kind is not AbscissaKind.EMDEN_FOWLER_T:
        raise ValueError("ef_inverse expects a trajectory in t")
    t = psi.x
    r = np.exp(t)
    p, pp, ppp = psi.y, psi.yp, psi.ypp
    u = p / r
    up = (pp - p) / (r * r)
    upp = (ppp - 3 * pp + 2 * p) / r ** 3
    return Trajectory(r, u, up, upp, kind=AbscissaKind.RADIAL_R,
                      status=psi.status, nfev=psi.nfev, rtol=psi.rtol)


def radial_to_ef_F(profile: Trajectory) -> Trajectory:
    """``F(r)`` samples to ``Psi(t) = F(e^t)``."""
    r = profile.x
    if np.any(r <= 0):
        raise ValueError("Emden-Fowler transformation needs positive radii")
    F, Fp, Fpp = profile.y, profile.yp, profile.ypp
    return Trajectory(np.log(r), F, r * Fp, r * Fp + r * r * Fpp,
                      kind=AbscissaKind.EMDEN_FOWLER_T, status=profile.status,
                      nfev=profile.nfev, rtol=profile.rtol)


def F_to_u(profile: Trajectory) -> Trajectory:
    """``F = r u`` samples (in r) to ``u`` samples."""
    r = profile.x
    F, Fp, Fpp = profile.y, profile.yp, profile.ypp
    u = F / r
    up = (Fp - u) / r
    upp = (Fpp - 2 * up) / r
    return Trajectory(r, u, up, upp, kind=AbscissaKind.RADIAL_R, status=profile.status,
                      nfev=profile.nfev, rtol=profile.rtol)
