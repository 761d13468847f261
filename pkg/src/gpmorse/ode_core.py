"""Adaptive Dormand-Prince 5(4) integration of scalar second-order ODEs.

The right-hand side is always given as ``rhs(x, y, yp) -> ypp``.  The state
``(y, y')`` is kept as two Python floats, which is markedly faster than small
numpy arrays for the step counts used here.

Accepted steps are stored as samples ``(x, y, y', y'')``; ``y''`` comes for free
from the FSAL stage.  Continuous evaluation uses the quintic Hermite
polynomial through the two end samples of each step, which needs nothing
beyond the samples themselves and therefore survives change of variables
(see :func:`gpmorse.model.ef_forward`).
"""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

Rhs = Callable[[float, float, float], float]
StopFn = Callable[[float, float, float], bool]


class IntegrationError(RuntimeError):
    """Integration aborted; ``trajectory`` holds everything accepted so far."""

    def __init__(self, msg: str, trajectory: Optional["Trajectory"] = None):
        super().__init__(msg)
        self.trajectory = trajectory


class StepUnderflow(IntegrationError):
    pass


class BudgetExhausted(IntegrationError):
    pass


class NonFiniteRhs(IntegrationError):
    pass


class OutOfSpan(ValueError):
    pass


class AbscissaKind(enum.Enum):
    RADIAL_R = "r"
    EMDEN_FOWLER_T = "t"


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-10
    atol: float = 1e-12
    h_init: Optional[float] = None
    h_min: float = 1e-13
    max_steps: int = 200_000
    blowup_threshold: float = 1e8

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.h_min > 0):
            raise ValueError("rtol, atol and h_min must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.blowup_threshold > 1:
            raise ValueError("blowup_threshold must exceed 1")

    def scaled(self, factor: float) -> "Tolerances":
        """Same settings with rtol and atol multiplied by ``factor``."""
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)


# quintic Hermite basis on s in [0, 1] and its derivative
def _hermite(s):
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    s5 = s4 * s
    h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5
    h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5
    h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5)
    h3 = 0.5 * (s3 - 2.0 * s4 + s5)
    h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5
    h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5
    return h0, h1, h2, h3, h4, h5


def _hermite_deriv(s):
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    g0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4
    g1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4
    g2 = 0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4)
    g3 = 0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4)
    g4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4
    g5 = 30.0 * s2 - 60.0 * s3 + 30.0 * s4
    return g0, g1, g2, g3, g4, g5


class Trajectory:
    """Ordered samples of a second-order ODE solution with continuous evaluation.

    Samples are kept in integration order; ``direction`` is +1 for increasing
    abscissae and -1 otherwise.  ``status`` records how the run ended:
    ``"complete"``, ``"stopped"`` (stop callback fired) or ``"blowup"``.
    Instances are treated as immutable.
    """

    def __init__(self, x, y, yp, ypp, kind=AbscissaKind.RADIAL_R,
                 status="complete", nfev=0, rtol=1e-10):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a trajectory needs at least two samples")
        dx = np.diff(x)
        if np.all(dx > 0):
            self.direction = 1
        elif np.all(dx < 0):
            self.direction = -1
        else:
            raise ValueError("abscissae must be strictly monotone")
        self.x = x
        self.y = np.asarray(y, dtype=float)
        self.yp = np.asarray(yp, dtype=float)
        self.ypp = np.asarray(ypp, dtype=float)
        for a in (self.x, self.y, self.yp, self.ypp):
            a.setflags(write=False)
        self.kind = kind
        self.status = status
        self.nfev = nfev
        self.rtol = rtol
        sl = slice(None) if self.direction > 0 else slice(None, None, -1)
        self._xa = self.x[sl]
        self._ya = self.y[sl]
        self._ypa = self.yp[sl]
        self._yppa = self.ypp[sl]
        self._xlist = self._xa.tolist()
        self._ylist = self._ya.tolist()
        self._yplist = self._ypa.tolist()
        self._ypplist = self._yppa.tolist()

    def __len__(self):
        return self.x.size

    def __repr__(self):
        return (f"Trajectory(kind={self.kind.value}, n={len(self)}, "
                f"span=[{self.x[0]:.6g}, {self.x[-1]:.6g}], status={self.status})")

    @property
    def span(self) -> tuple[float, float]:
        """(lo, hi) of the covered abscissae, regardless of direction."""
        return self._xlist[0], self._xlist[-1]

    def contains(self, x: float, slack: float = 0.0) -> bool:
        lo, hi = self.span
        return lo - slack <= x <= hi + slack

    def _locate(self, x: float) -> int:
        xs = self._xlist
        if not (xs[0] <= x <= xs[-1]):
            # allow round-off at the ends
            tol = 1e-12 * max(1.0, abs(x))
            if xs[0] - tol <= x < xs[0]:
                return 0
            if xs[-1] < x <= xs[-1] + tol:
                return len(xs) - 2
            raise OutOfSpan(f"x={x!r} outside [{xs[0]!r}, {xs[-1]!r}]")
        i = bisect.bisect_right(xs, x) - 1
        return min(max(i, 0), len(xs) - 2)

    def __call__(self, x: float) -> tuple[float, float]:
        """Interpolated ``(y, y')`` at scalar ``x``."""
        i = self._locate(x)
        xs = self._xlist
        x0 = xs[i]
        h = xs[i + 1] - x0
        s = (x - x0) / h
        ys, yps, ypps = self._ylist, self._yplist, self._ypplist
        p0, p1 = ys[i], ys[i + 1]
        q0, q1 = h * yps[i], h * yps[i + 1]
        c0, c1 = h * h * ypps[i], h * h * ypps[i + 1]
        h0, h1, h2, h3, h4, h5 = _hermite(s)
        g0, g1, g2, g3, g4, g5 = _hermite_deriv(s)
        y = p0 * h0 + q0 * h1 + c0 * h2 + c1 * h3 + q1 * h4 + p1 * h5
        dy = (p0 * g0 + q0 * g1 + c0 * g2 + c1 * g3 + q1 * g4 + p1 * g5) / h
        return y, dy

    def value(self, x: float) -> float:
        return self(x)[0]

    def sample(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised ``(y, y')`` at the abscissae ``xq``."""
        xq = np.asarray(xq, dtype=float)
        lo, hi = self.span
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if xq.size and (xq.min() < lo - tol or xq.max() > hi + tol):
            raise OutOfSpan(f"query outside [{lo!r}, {hi!r}]")
        xa = self._xa
        i = np.clip(np.searchsorted(xa, xq, side="right") - 1, 0, xa.size - 2)
        x0 = xa[i]
        h = xa[i + 1] - x0
        s = (xq - x0) / h
        p0, p1 = self._ya[i], self._ya[i + 1]
        q0, q1 = h * self._ypa[i], h * self._ypa[i + 1]
        c0, c1 = h * h * self._yppa[i], h * h * self._yppa[i + 1]
        h0, h1, h2, h3, h4, h5 = _hermite(s)
        g0, g1, g2, g3, g4, g5 = _hermite_deriv(s)
        y = p0 * h0 + q0 * h1 + c0 * h2 + c1 * h3 + q1 * h4 + p1 * h5
        dy = (p0 * g0 + q0 * g1 + c0 * g2 + c1 * g3 + q1 * g4 + p1 * g5) / h
        return y, dy

    def restricted(self, lo: float, hi: float) -> "Trajectory":
        """Samples with abscissa in [lo, hi] (end samples kept if needed)."""
        xs = self.x
        keep = (xs >= lo) & (xs <= hi)
        idx = np.flatnonzero(keep)
        if idx.size < 2:
            raise OutOfSpan(f"[{lo}, {hi}] holds fewer than two samples")
        s = slice(idx[0], idx[-1] + 1)
        return Trajectory(xs[s], self.y[s], self.yp[s], self.ypp[s], kind=self.kind,
                          status=self.status, rtol=self.rtol)

    def reversed(self) -> "Trajectory":
        s = slice(None, None, -1)
        return Trajectory(self.x[s], self.y[s], self.yp[s], self.ypp[s], kind=self.kind,
                          status=self.status, nfev=self.nfev, rtol=self.rtol)

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.x, factor * self.y, factor * self.yp, factor * self.ypp,
                          kind=self.kind, status=self.status, nfev=self.nfev, rtol=self.rtol)

    @staticmethod
    def join(first: "Trajectory", second: "Trajectory") -> "Trajectory":
        """Concatenate two increasing trajectories; overlap of ``second`` is dropped."""
        a = first if first.direction > 0 else first.reversed()
        b = second if second.direction > 0 else second.reversed()
        xa_end = a.x[-1]
        keep = b.x > xa_end * (1 + 1e-14) + 1e-300 if xa_end > 0 else b.x > xa_end
        if not np.any(keep):
            return a
        return Trajectory(
            np.concatenate([a.x, b.x[keep]]),
            np.concatenate([a.y, b.y[keep]]),
            np.concatenate([a.yp, b.yp[keep]]),
            np.concatenate([a.ypp, b.ypp[keep]]),
            kind=a.kind, status=b.status, nfev=a.nfev + b.nfev, rtol=max(a.rtol, b.rtol),
        )


@dataclass(frozen=True)
class Event:
    """Refined sign change of ``y``."""
    x_star: float
    bracket: tuple[float, float]
    residual: float
    slope: float = 0.0


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1 = 71 / 57600
_E3 = -71 / 16695
_E4 = 71 / 1920
_E5 = -17253 / 339200
_E6 = 22 / 525
_E7 = -1 / 40

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0


def _initial_step(rhs, x0, y0, v0, a0, direction, tol):
    # Hairer-Norsett-Wanner heuristic
    sc0 = tol.atol + tol.rtol * abs(y0)
    sc1 = tol.atol + tol.rtol * abs(v0)
    d0 = math.sqrt(0.5 * ((y0 / sc0) ** 2 + (v0 / sc1) ** 2))
    d1 = math.sqrt(0.5 * ((v0 / sc0) ** 2 + (a0 / sc1) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * v0
    v1 = v0 + direction * h0 * a0
    a1 = rhs(x0 + direction * h0, y1, v1)
    if not math.isfinite(a1):
        return h0
    d2 = math.sqrt(0.5 * (((v1 - v0) / sc0) ** 2 + ((a1 - a0) / sc1) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def integrate(rhs: Rhs, x0: float, state0: Sequence[float], x1: float,
              tol: Tolerances = Tolerances(), kind: AbscissaKind = AbscissaKind.RADIAL_R,
              stop: Optional[StopFn] = None) -> Trajectory:
    """Integrate ``y'' = rhs(x, y, y')`` from ``x0`` to ``x1``.

    Returns the trajectory on reaching ``x1``.  If ``|y|`` or ``|y'|`` exceeds
    ``tol.blowup_threshold`` the run ends early with ``status="blowup"``; if
    ``stop(x, y, yp)`` returns true after an accepted step the run ends with
    ``status="stopped"``.  Both keep the last valid state as final sample.

    Raises:
        StepUnderflow: step size dropped below ``tol.h_min``.
        BudgetExhausted: more than ``tol.max_steps`` attempted steps.
        NonFiniteRhs: the right-hand side returned inf/nan at the start.
    """
    x0 = float(x0)
    x1 = float(x1)
    if x0 == x1:
        raise ValueError("x0 and x1 must differ")
    direction = 1.0 if x1 > x0 else -1.0
    y, v = float(state0[0]), float(state0[1])
    a = rhs(x0, y, v)
    if not (math.isfinite(a) and math.isfinite(y) and math.isfinite(v)):
        raise NonFiniteRhs(f"non-finite right-hand side at x={x0}")
    rtol, atol = tol.rtol, tol.atol
    big = tol.blowup_threshold

    xs, ys, vs, accs = [x0], [y], [v], [a]
    nfev = 1

    def build(status):
        return Trajectory(xs, ys, vs, accs, kind=kind, status=status, nfev=nfev, rtol=rtol)

    if tol.h_init is not None:
        h = abs(tol.h_init)
    else:
        h = _initial_step(rhs, x0, y, v, a, direction, tol)
        nfev += 1
    h = min(h, abs(x1 - x0))
    x = x0
    steps = 0
    rejected_last = False
    while True:
        if steps >= tol.max_steps:
            raise BudgetExhausted(f"step budget {tol.max_steps} exhausted at x={x}",
                                  build("budget") if len(xs) > 1 else None)
        steps += 1
        if h < tol.h_min:
            raise StepUnderflow(f"step {h:.3e} below h_min at x={x}",
                                build("underflow") if len(xs) > 1 else None)
        last = False
        if h >= abs(x1 - x) * (1 - 1e-12):
            h = abs(x1 - x)
            last = True
        hs = direction * h
        # stages; k = (dy, dv) = (v, a)
        k1y, k1v = v, a
        y2 = y + hs * _A21 * k1y
        v2 = v + hs * _A21 * k1v
        k2y, k2v = v2, rhs(x + _C2 * hs, y2, v2)
        y3 = y + hs * (_A31 * k1y + _A32 * k2y)
        v3 = v + hs * (_A31 * k1v + _A32 * k2v)
        k3y, k3v = v3, rhs(x + _C3 * hs, y3, v3)
        y4 = y + hs * (_A41 * k1y + _A42 * k2y + _A43 * k3y)
        v4 = v + hs * (_A41 * k1v + _A42 * k2v + _A43 * k3v)
        k4y, k4v = v4, rhs(x + _C4 * hs, y4, v4)
        y5 = y + hs * (_A51 * k1y + _A52 * k2y + _A53 * k3y + _A54 * k4y)
        v5 = v + hs * (_A51 * k1v + _A52 * k2v + _A53 * k3v + _A54 * k4v)
        k5y, k5v = v5, rhs(x + _C5 * hs, y5, v5)
        y6 = y + hs * (_A61 * k1y + _A62 * k2y + _A63 * k3y + _A64 * k4y + _A65 * k5y)
        v6 = v + hs * (_A61 * k1v + _A62 * k2v + _A63 * k3v + _A64 * k4v + _A65 * k5v)
        k6y, k6v = v6, rhs(x + hs, y6, v6)
        yn = y + hs * (_B1 * k1y + _B3 * k3y + _B4 * k4y + _B5 * k5y + _B6 * k6y)
        vn = v + hs * (_B1 * k1v + _B3 * k3v + _B4 * k4v + _B5 * k5v + _B6 * k6v)
        xn = x1 if last else x + hs
        k7y, k7v = vn, rhs(xn, yn, vn)
        nfev += 6
        ey = hs * (_E1 * k1y + _E3 * k3y + _E4 * k4y + _E5 * k5y + _E6 * k6y + _E7 * k7y)
        ev = hs * (_E1 * k1v + _E3 * k3v + _E4 * k4v + _E5 * k5v + _E6 * k6v + _E7 * k7v)
        if not (math.isfinite(k7v) and math.isfinite(yn) and math.isfinite(vn)
                and math.isfinite(ey) and math.isfinite(ev)):
            h *= 0.25
            rejected_last = True
            continue
        sy = atol + rtol * max(abs(y), abs(yn))
        sv = atol + rtol * max(abs(v), abs(vn))
        err = math.sqrt(0.5 * ((ey / sy) ** 2 + (ev / sv) ** 2))
        if err <= 1.0:
            x, y, v, a = xn, yn, vn, k7v
            xs.append(x)
            ys.append(y)
            vs.append(v)
            accs.append(a)
            if abs(y) > big or abs(v) > big:
                return build("blowup")
            if stop is not None and stop(x, y, v):
                return build("stopped")
            if last:
                return build("complete")
            fac = _FAC_MAX if err == 0 else min(_FAC_MAX, _SAFETY * err ** -0.2)
            if rejected_last:
                fac = min(fac, 1.0)
            h *= fac
            rejected_last = False
        else:
            h *= max(_FAC_MIN, _SAFETY * err ** -0.2)
            rejected_last = True


def _refine_zero(traj: Trajectory, lo: float, hi: float) -> tuple[float, float]:
    ylo = traj(lo)[0]
    width_tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    for _ in range(200):
        if hi - lo <= width_tol:
            break
        mid = 0.5 * (lo + hi)
        ym = traj(mid)[0]
        if ym == 0.0:
            return mid, mid
        if (ym > 0) == (ylo > 0):
            lo, ylo = mid, ym
        else:
            hi = mid
    return lo, hi


def refine_events(traj: Trajectory, tol: Tolerances = Tolerances()) -> list[Event]:
    """One event per sign change of the sampled ``y``, refined by bisection.

    Tangential dips (no sign change) produce nothing.  Events are returned in
    increasing abscissa.
    """
    xa = traj._xa
    ya = traj._ya
    sgn = np.sign(ya)
    nz = np.flatnonzero(sgn != 0)
    events = []
    if nz.size < 2:
        return events
    flips = np.flatnonzero(sgn[nz[1:]] != sgn[nz[:-1]])
    for k in flips:
        i, j = nz[k], nz[k + 1]
        lo, hi = _refine_zero(traj, float(xa[i]), float(xa[j]))
        xs = 0.5 * (lo + hi)
        y, dy = traj(xs)
        events.append(Event(x_star=xs, bracket=(lo, hi), residual=abs(y), slope=dy))
    return events


def wronskian(traj1: Trajectory, traj2: Trajectory, x: float) -> float:
    """``y1 y2' - y1' y2`` at ``x`` from the dense interpolants."""
    if not (traj1.contains(x, 1e-12 * max(1.0, abs(x))) and
            traj2.contains(x, 1e-12 * max(1.0, abs(x)))):
        raise OutOfSpan(f"x={x} outside one of the trajectories")
    y1, d1 = traj1(x)
    y2, d2 = traj2(x)
    return y1 * d2 - d1 * y2
