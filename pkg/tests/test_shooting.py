import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpmorse import model, shooting
from gpmorse.model import ProblemParams
from gpmorse.ode_core import AbscissaKind, Trajectory
from gpmorse.shooting import ShotKind


@pytest.fixture(scope="module")
def gs1():
    return shooting.solve_lambda(13, 1.0)


@pytest.fixture(scope="module")
def sing():
    return shooting.solve_lambda_inf(13)


@pytest.mark.parametrize("b", [0.05, 0.1])
def test_small_amplitude_matches_perturbation_theory(b):
    # For u = b e^{-r^2/2} + O(b^3): d - lam = b^2 int e^{-2r^2} / int e^{-r^2} = b^2 2^{-d/2}
    d = 13
    gs = shooting.solve_lambda(d, b)
    shift = d - gs.lam
    assert shift == pytest.approx(b * b * 2 ** (-d / 2), rel=10 * b * b)
    r = np.linspace(0.1, 3.0, 30)
    assert np.allclose(gs.u(r), b * np.exp(-r * r / 2), rtol=10 * b * b, atol=1e-6)


def test_ground_state_shape(gs1):
    u, du = gs1.profile.y, gs1.profile.yp
    assert np.all(u > 0)
    assert np.all(du[1:] < 0)
    assert gs1.u(0.0) == pytest.approx(1.0, abs=1e-6)
    assert gs1.bracket_residual < 1e-10
    assert gs1.diagnostics["final_class"] == "decayed"
    assert gs1.r0 <= gs1.r_match <= math.exp(gs1.tail_T)
    assert 12.9 < gs1.lam < 13.0


def test_profile_continues_with_tail(gs1):
    hi = gs1.profile.span[1]
    lead = gs1.c_coeff * np.exp(model.tail_log_profile(gs1.params, math.log(hi))) / hi
    assert gs1.u(hi) == pytest.approx(lead, rel=1e-2)
    far = gs1.u(np.array([12.0, 20.0]))
    assert np.all(far > 0) and far[1] < far[0] * 1e-30


def test_ef_and_radial_forms_agree(gs1):
    for r in (0.01, 0.5, 2.0, 5.0):
        psi = gs1.psi(math.log(r))[0]
        assert psi == pytest.approx(r * gs1.profile(r)[0], rel=1e-10)


def test_lambda_decreases_with_b(gs1):
    g2 = shooting.solve_lambda(13, 2.0)
    assert g2.lam < gs1.lam


def test_singular_solution(sing):
    assert sing.profile.y[0] == pytest.approx(math.sqrt(10), rel=1e-5)
    assert 12.85 < sing.lam_inf < 12.95
    assert sing.c_inf > 0
    r = 0.01
    assert sing.u(r) * r == pytest.approx(math.sqrt(10), rel=1e-3)
    assert np.all(sing.u_profile.y > 0)
    assert sing.lam == sing.lam_inf and sing.c_coeff == sing.c_inf
    assert sing.diagnostics["final_class"] == "decayed"


def test_classification_sides():
    p_lo = ProblemParams(13, 9.5)
    p_hi = ProblemParams(13, 12.999)
    lo = shooting.classify_shot(p_lo, shooting.start_regular(p_lo, 1.0))
    hi = shooting.classify_shot(p_hi, shooting.start_regular(p_hi, 1.0))
    assert lo.kind is ShotKind.TURNED_UP and lo.side == 1
    assert hi.kind is ShotKind.CROSSED_ZERO and hi.side == -1 and hi.x_star > 0


def test_classify_trajectory_synthetic():
    x = np.linspace(0, 5, 200)
    cross = Trajectory(x, np.cos(x), -np.sin(x), -np.cos(x))
    assert shooting.classify_trajectory(cross, 1.0).kind is ShotKind.CROSSED_ZERO
    ev = shooting.classify_trajectory(cross, 1.0).x_star
    assert ev == pytest.approx(math.pi / 2, abs=1e-6)
    up = Trajectory(x, np.cosh(x - 2), np.sinh(x - 2), np.cosh(x - 2))
    assert shooting.classify_trajectory(up, 2.0).kind is ShotKind.TURNED_UP
    xx = np.linspace(0, 8, 400)
    g = np.exp(-xx * xx)
    dec = Trajectory(xx, g, -2 * xx * g, (4 * xx * xx - 2) * g)
    c = shooting.classify_trajectory(dec, 1.0)
    assert c.kind is ShotKind.DECAYED and c.residual < 1e-8
    zero = Trajectory(x, 0 * x, 0 * x, 0 * x)
    assert shooting.classify_trajectory(zero, 1.0).kind is ShotKind.UNDETERMINED


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.01, 100.0), lam=st.floats(9.0, 13.0))
def test_extract_c_recovers_planted_coefficient(c, lam):
    p = ProblemParams(13, lam)
    t = np.linspace(0.5, 2.0, 200)
    psi = c * np.exp(model.tail_log_profile(p, t))
    q = model.tail_exponent(p) - np.exp(2 * t)
    traj = Trajectory(t, psi, q * psi, (q * q - 2 * np.exp(2 * t)) * psi,
                      kind=AbscissaKind.EMDEN_FOWLER_T)
    assert shooting.extract_c(traj, p) == pytest.approx(c, rel=1e-12)


def test_extract_c_on_ground_state(gs1):
    # the computed tail is well approximated by the leading asymptotics
    tail = gs1.psi.restricted(1.8, gs1.tail_T)
    assert shooting.extract_c(tail, gs1.params, spread=0.05) == pytest.approx(gs1.c_coeff, rel=0.05)
    with pytest.raises(shooting.WindowEmpty):
        z = Trajectory([0.0, 1.0, 2.0], [0, 0, 0], [0, 0, 0], [0, 0, 0],
                       kind=AbscissaKind.EMDEN_FOWLER_T)
        shooting.extract_c(z, gs1.params)


def test_tail_solution_starts_on_anchor(gs1):
    T = gs1.tail_T
    tr = shooting.tail_solution(gs1.params, 2.0, T, 0.5)
    psi, dpsi = model.tail_anchor(gs1.params, 2.0, T)
    assert tr(T)[0] == pytest.approx(psi, rel=1e-12)
    assert tr(T)[1] == pytest.approx(dpsi, rel=1e-12)
    assert tr.direction == 1


def test_shoot_ef_matches_radial_shot(gs1):
    t0 = math.log(gs1.r0)
    tr = shooting.shoot_ef(gs1.params, 1.0, t0, 0.5)
    for t in (-2.0, 0.0, 0.5):
        assert tr(t)[0] == pytest.approx(gs1.psi(t)[0], rel=1e-7)


def test_regime_split():
    for d in range(5, 13):
        assert shooting.classify_regime(d) is shooting.Regime.OSCILLATORY
    for d in (13, 14, 20, 50):
        assert shooting.classify_regime(d) is shooting.Regime.MONOTONE
    assert 12 < 8 + 2 * math.sqrt(6) < 13


def test_default_r0():
    assert shooting.default_r0(1.0) == model.R0_DEFAULT
    assert shooting.default_r0(100.0) == pytest.approx(1e-4)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        shooting.solve_lambda(13, -1.0)
    with pytest.raises(ValueError):
        shooting.solve_lambda(3, 1.0)
    with pytest.raises(ValueError):
        shooting.solve_lambda_inf(4)
    with pytest.raises(ValueError):
        shooting.sweep_curve(13, [2.0, 1.0])
    with pytest.raises(ValueError):
        shooting.sweep_curve(13, [0.0, 1.0])


def test_sweep_records_failures():
    cfg = shooting.ShootingConfig(max_bisections=2)
    pts, fails = shooting.sweep_curve(13, [1.0], cfg)
    assert pts == [] and len(fails) == 1
    assert fails[0][0] == 1.0 and "NoConvergence" in fails[0][1]


def test_sweep_points(gs1):
    pts, fails = shooting.sweep_curve(13, [1.0], with_morse=True)
    assert not fails
    assert pts[0].lam == pytest.approx(gs1.lam, abs=1e-12)
    assert pts[0].morse == 1
