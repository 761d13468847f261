import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp, simpson

from gpmorse import heteroclinic as het, model, shooting
from gpmorse.linearization import LinearKind, LinearSolution
from gpmorse.model import ProblemParams
from gpmorse.ode_core import AbscissaKind, Trajectory

S10 = math.sqrt(10)


@pytest.fixture(scope="module")
def theta():
    return het.solve_theta(13)


def _exp_traj(t, terms, offset=0.0):
    y = offset + sum(a * np.exp(k * t) for a, k in terms)
    yp = sum(a * k * np.exp(k * t) for a, k in terms)
    ypp = sum(a * k * k * np.exp(k * t) for a, k in terms)
    return Trajectory(t, y, yp, ypp, kind=AbscissaKind.EMDEN_FOWLER_T)


def test_theta_connects_fixed_points(theta):
    assert theta.monotone
    assert theta(-12.0)[0] == pytest.approx(math.exp(-12), rel=1e-9)
    assert abs(theta(10.0)[0] - S10) < 1e-12
    assert np.all(theta.y < S10 + 1e-12)


def test_theta_against_independent_solver(theta):
    d = 13
    t0 = -12.0
    y0 = model.theta_series_start(d, t0)
    sol = solve_ivp(lambda t, z: [z[1], model.rhs_theta(d, t, z[0], z[1])], (t0, 4.0), y0,
                    method="DOP853", rtol=1e-12, atol=1e-16, dense_output=True)
    for t in (-5.0, 0.0, 2.0, 4.0):
        assert theta(t)[0] == pytest.approx(sol.sol(t)[0], rel=1e-8)


def test_theta_lyapunov_balance(theta):
    # H = Theta'^2/2 - 5 Theta^2 + Theta^4/4 decreases at the rate (d-4) Theta'^2
    def H(t):
        y, v = theta(t)
        return 0.5 * v * v - 5.0 * y * y + 0.25 * y ** 4
    t = np.linspace(-6.0, 3.0, 4001)
    v = theta.sample(t)[1]
    loss = 9.0 * simpson(v * v, x=t)
    assert H(3.0) - H(-6.0) == pytest.approx(-loss, rel=1e-7)


def test_theta_rejects_unsupported():
    with pytest.raises(ValueError):
        het.solve_theta(12)
    with pytest.raises(ValueError):
        het.solve_theta(13, t_min=-5.0)
    assert isinstance(het.fit_A0(None, 12), het.Unsupported)
    assert isinstance(het.a0_threshold(8), het.Unsupported)


def test_a0_threshold():
    assert abs(het.a0_threshold(13) - 1 / 3) < 1e-12


@settings(max_examples=40, deadline=None)
@given(A=st.floats(-5, 5).filter(lambda a: abs(a) > 1e-2), B=st.floats(-5, 5))
def test_two_exponential_fit_recovers_planted(A, B):
    t = np.linspace(3, 6, 241)
    y = A * np.exp(-4 * t) + B * np.exp(-5 * t)
    a, b, resid, cond = het.fit_two_exponential(t, y, -4.0, -5.0)
    assert a == pytest.approx(A, rel=1e-6)
    assert b == pytest.approx(B, rel=1e-6, abs=1e-6 * abs(A))
    assert resid < 1e-10 and cond < het.CONDITIONING_CAP


def test_free_exponent_fit_recovers_planted():
    t = np.linspace(3, 6, 241)
    y = 0.7 * np.exp(-3.9 * t) + 0.2 * np.exp(-5.3 * t)
    (a, b), lead = het.fit_free_exponents(t, y, -4.0, -5.0)
    assert a == pytest.approx(-3.9, abs=1e-6)
    assert b == pytest.approx(-5.3, abs=1e-4)
    assert lead == pytest.approx(0.7, rel=1e-6)
    assert het.log_slope(t, np.exp(-4 * t)) == pytest.approx(-4.0, abs=1e-12)


def test_fit_A0_planted():
    t = np.linspace(1.0, 10.0, 4001)
    terms = [(0.7, -4.0), (0.3, -5.0)]
    dev = _exp_traj(t, terms)
    orbit = het.HeteroclinicOrbit(_exp_traj(t, terms, offset=S10), dev, 13)
    fit = het.fit_A0(orbit, 13)
    assert fit.leading == pytest.approx(0.7, abs=1e-6)
    assert fit.free_exponents[0] == pytest.approx(-4.0, abs=1e-6)


def test_fit_Linf_planted():
    t = np.linspace(-8.0, 0.0, 4001)
    traj = _exp_traj(t, [(2.0, -5.0), (0.3, -4.0)])
    sol = LinearSolution(LinearKind.DC_PSI_INF, None, ProblemParams(13, 12.9), traj, 0.0, ())
    fit = het.fit_Linf(sol, 13)
    assert fit.leading == pytest.approx(2.0, abs=1e-6)
    assert fit.window_sensitivity < 1e-6
    wrong = LinearSolution(LinearKind.DC_PSI_C, None, ProblemParams(13, 12.9), traj, 0.0, ())
    with pytest.raises(ValueError):
        het.fit_Linf(wrong, 13)


def test_signal_below_noise():
    t = np.linspace(1.0, 10.0, 400)
    flat = _exp_traj(t, [(0.0, -4.0)], offset=S10)
    with pytest.raises(het.SignalBelowNoise):
        het.fit_A0(het.HeteroclinicOrbit(flat, _exp_traj(t, [(0.0, -4.0)]), 13), 13)


def test_fit_A0_on_orbit(theta):
    fit = het.fit_A0(theta, 13)
    assert fit.accepted
    assert abs(fit.free_exponents[0] + 4) < 0.05
    assert abs(fit.leading) > 1e-3
    assert fit.window_sensitivity < 1e-2


def test_rate_and_slope_checks(theta):
    gs = [shooting.solve_lambda(13, b) for b in (8.0, 16.0)]
    rep = het.check_prop21(13, [g.b for g in gs], [g.lam for g in gs], theta)
    assert rep.within(1 / 6, 3 / 8)
    with pytest.raises(het.PrerequisiteFitMissing):
        het.check_cor32(gs, None)
    with pytest.raises(het.PrerequisiteFitMissing):
        het.check_cor42(gs, None)
    c = het.check_cor32(gs, het.fit_A0(theta, 13).leading)
    assert c.conclusive and len(c.deviations) == 2
