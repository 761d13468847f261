"""Mass, energy and action of computed profiles; mass curves and oscillation counts.

Integrals use the radial weight ``r^{d-1}`` without the sphere-area factor,
which is irrelevant for the comparisons made here.  Quadrature covers the
computed span; the pieces below ``r0`` and beyond the span are added in
closed form from the small-r behaviour and the Gaussian tail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import simpson
from scipy.special import gamma, gammaincc

from .shooting import CurvePoint, GroundState, SingularState

QUAD_POINTS = 8001
SPHERE_FACTOR_NOTE = "radial weight r^(d-1); sphere-area factor omitted"
VK_NOTE = "slope check only; well-posedness of the time evolution is not assessed"


class DegenerateSpacing(ValueError):
    pass


State = Union[GroundState, SingularState]


def _profile(state: State):
    return state.u_profile if isinstance(state, SingularState) else state.profile


def _grid(lo: float, hi: float, n: int) -> np.ndarray:
    n = n + 1 if n % 2 == 0 else n
    return np.linspace(lo, hi, n)


def _upper_gamma(s: float, x: float) -> float:
    """``Gamma(s, x)`` for ``s > 0``."""
    return float(gammaincc(s, x) * gamma(s))


def _head_mass(state: State) -> float:
    d, r0 = state.d, _profile(state).span[0]
    if isinstance(state, SingularState):
        return (d - 3) * r0 ** (d - 2) / (d - 2)
    return state.b ** 2 * r0 ** d / d


def _tail_mass(state: State, R: float) -> float:
    # u^2 r^{d-1} = c^2 r^{lam-1} e^{-r^2}
    lam = state.lam
    return 0.5 * state.c_coeff ** 2 * _upper_gamma(0.5 * lam, R * R)


def mass_integrand(state: State, r):
    u = state.u(r)
    return u * u * np.power(r, state.d - 1)


def mass(state: State, points: int = QUAD_POINTS) -> float:
    """``int_0^inf u^2 r^{d-1} dr`` by Simpson's rule in ``r`` plus head and tail pieces."""
    lo, hi = _profile(state).span
    r = _grid(lo, hi, points)
    u = _profile(state).sample(r)[0]
    body = float(simpson(u * u * r ** (state.d - 1), x=r))
    return body + _head_mass(state) + _tail_mass(state, hi)


def mass_t(state: State, points: int = QUAD_POINTS) -> float:
    """Same integral in ``t``: ``int Psi^2 e^{(d-2)t} dt`` on the span, plus head and tail."""
    lo, hi = state.psi.span
    t = _grid(lo, hi, points)
    psi = state.psi.sample(t)[0]
    body = float(simpson(psi * psi * np.exp((state.d - 2) * t), x=t))
    return body + _head_mass(state) + _tail_mass(state, math.exp(hi))


def _head_energy(state: State) -> float:
    d, r0 = state.d, _profile(state).span[0]
    if isinstance(state, SingularState):
        k = d - 3
        # u ~ sqrt(k)/r: u'^2 r^{d-1} = k r^{d-5}, r^2 u^2 r^{d-1} = k r^{d-1}, u^4 r^{d-1} = k^2 r^{d-5}
        return k * r0 ** (d - 4) / (d - 4) + k * r0 ** d / d - 0.5 * k * k * r0 ** (d - 4) / (d - 4)
    b = state.b
    return b * b * r0 ** (d + 2) / (d + 2) - 0.5 * b ** 4 * r0 ** d / d


def _tail_energy(state: State, R: float) -> float:
    # u' ~ -r u at leading order, so u'^2 + r^2 u^2 ~ 2 r^2 u^2; the quartic term is negligible
    lam = state.lam
    return state.c_coeff ** 2 * _upper_gamma(0.5 * lam + 1.0, R * R)


def _energy_density(r, u, up, d):
    return (up * up + r * r * u * u - 0.5 * u ** 4) * r ** (d - 1)


def energy(state: State, points: int = QUAD_POINTS) -> float:
    """``int (u'^2 + r^2 u^2 - u^4/2) r^{d-1} dr`` with head and tail pieces."""
    lo, hi = _profile(state).span
    r = _grid(lo, hi, points)
    u, up = _profile(state).sample(r)
    body = float(simpson(_energy_density(r, u, up, state.d), x=r))
    return body + _head_energy(state) + _tail_energy(state, hi)


def energy_t(state: State, points: int = QUAD_POINTS) -> float:
    """Energy evaluated from the Emden-Fowler samples."""
    lo, hi = state.psi.span
    t = _grid(lo, hi, points)
    psi, dpsi = state.psi.sample(t)
    r = np.exp(t)
    u = psi / r
    up = (dpsi - psi) / (r * r)
    body = float(simpson(_energy_density(r, u, up, state.d) * r, x=t))
    return body + _head_energy(state) + _tail_energy(state, math.exp(hi))


def action(state: State, lam: Optional[float] = None, points: int = QUAD_POINTS) -> float:
    """``E(u) - lam M(u)``; ``lam`` defaults to the state's own value."""
    lam = state.lam if lam is None else lam
    return energy(state, points) - lam * mass(state, points)


# -- Euler-Lagrange residual of the action ------------------------------------------------

def bump(r, center: float = 1.5, width: float = 1.0):
    """Smooth bump supported on ``(center - width, center + width)``, and its derivative."""
    r = np.asarray(r, dtype=float)
    s = (r - center) / width
    inside = np.abs(s) < 1
    phi = np.zeros_like(r)
    dphi = np.zeros_like(r)
    si = s[inside]
    g = np.exp(-1.0 / (1.0 - si * si))
    phi[inside] = g
    dphi[inside] = g * (-2.0 * si / (1.0 - si * si) ** 2) / width
    return phi, dphi


def stationarity_residual(state: GroundState, h: float = 1e-4, center: float = 1.5,
                          width: float = 1.0, points: int = 4001) -> float:
    """Relative central-difference derivative of the action along a compact bump.

    The derivative is divided by the sum of the absolute values of the
    terms making up the first variation, so zero means exact stationarity.
    """
    lo_r = max(center - width, _profile(state).span[0])
    hi_r = min(center + width, _profile(state).span[1])
    r = _grid(lo_r, hi_r, points)
    u, up = _profile(state).sample(r)
    phi, dphi = bump(r, center, width)
    d, lam = state.d, state.lam
    w = r ** (d - 1)

    def local_action(eps):
        v = u + eps * phi
        vp = up + eps * dphi
        return simpson((vp * vp + r * r * v * v - 0.5 * v ** 4 - lam * v * v) * w, x=r)

    deriv = (local_action(h) - local_action(-h)) / (2 * h)
    terms = 2 * (np.abs(up * dphi) + np.abs(r * r * u * phi) + np.abs(u ** 3 * phi)
                 + np.abs(lam * u * phi)) * w
    scale = simpson(terms, x=r)
    return float(abs(deriv) / scale)


# -- curves -------------------------------------------------------------------------

@dataclass(frozen=True)
class MassCurveReport:
    lam: tuple
    mass: tuple
    b: tuple
    slopes: tuple
    verdict: str
    singular_mass: Optional[float]
    distance_to_singular: tuple
    note: str = VK_NOTE

    @property
    def distance_decreasing_in_b(self) -> bool:
        order = np.argsort(self.b)
        dist = np.asarray(self.distance_to_singular)[order]
        return bool(np.all(np.diff(dist) < 0))


def mass_curve(points: Sequence[CurvePoint], singular_mass: Optional[float] = None
               ) -> MassCurveReport:
    """Pairwise slopes ``dM/dlam`` along increasing ``lam`` and the slope verdict."""
    if len(points) < 3:
        raise ValueError("a mass curve needs at least three points")
    pts = sorted(points, key=lambda p: p.lam)
    lam = np.array([p.lam for p in pts])
    m = np.array([p.mass for p in pts])
    dl = np.diff(lam)
    if np.any(dl == 0):
        raise DegenerateSpacing("two points share the same lambda")
    slopes = np.diff(m) / dl
    verdict = "stable-slope" if np.all(slopes < 0) else "unstable-slope"
    dist = tuple(abs(p.mass - singular_mass) for p in pts) if singular_mass is not None else ()
    return MassCurveReport(tuple(lam), tuple(m), tuple(p.b for p in pts), tuple(slopes),
                           verdict, singular_mass, dist)


def oscillation_count(points: Sequence[CurvePoint], lambda_inf: float) -> int:
    """Sign changes of ``lam(b) - lam_inf`` along increasing ``b``."""
    pts = sorted(points, key=lambda p: p.b)
    s = np.sign([p.lam - lambda_inf for p in pts])
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def lambda_prime_sign_changes(points: Sequence[CurvePoint]) -> int:
    """Sign changes of the discrete slope of ``lam(b)`` (reported, not interpreted)."""
    pts = sorted(points, key=lambda p: p.b)
    slope = np.sign(np.diff([p.lam for p in pts]))
    slope = slope[slope != 0]
    return int(np.count_nonzero(slope[1:] != slope[:-1]))
