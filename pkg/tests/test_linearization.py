import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpmorse import heteroclinic, linearization as lin, shooting
from gpmorse.linearization import LinearKind
from gpmorse.ode_core import Tolerances


@pytest.fixture(scope="module")
def gs1():
    return shooting.solve_lambda(13, 1.0)


@pytest.fixture(scope="module")
def gs8():
    return shooting.solve_lambda(13, 8.0)


@pytest.fixture(scope="module")
def sing():
    return shooting.solve_lambda_inf(13)


@settings(max_examples=20, deadline=None)
@given(k=st.floats(0.5, 3.0), length=st.floats(100.0, 200.0))
def test_renormalised_growth_is_exact(k, length):
    # y'' = k^2 y from (1, k): y = e^{k x}, far beyond double range for large k x
    segs = lin.integrate_linear(lambda x, y, yp: k * k * y, 0.0, (1.0, k), length,
                                Tolerances(1e-12, 1e-14))
    traj, ref = lin._merge(segs)
    x = traj.x[-1]
    assert math.log(abs(traj.y[-1])) + ref == pytest.approx(k * x, rel=1e-9)
    assert len(segs) >= int(k * length / math.log(lin.RENORM_AT))


def test_value_is_mantissa_times_scale(gs1):
    dc = lin.solve_dc_psi(gs1)
    t = 0.3
    m = dc.mantissa(t)
    v = dc.value(t)
    assert v[0] == pytest.approx(m[0] * math.exp(dc.log_scale), rel=1e-14)
    assert dc.kind is LinearKind.DC_PSI_C
    assert dc.renormalizations >= 0


def test_db_psi_matches_finite_difference(gs1):
    h = 1e-4
    tol = Tolerances(1e-13, 1e-16)
    t0, t1 = math.log(gs1.r0), math.log(gs1.r_match)
    plus = shooting.shoot_ef(gs1.params, gs1.b + h, t0, t1, tol)
    minus = shooting.shoot_ef(gs1.params, gs1.b - h, t0, t1, tol)
    db = lin.solve_db_psi(gs1, t_max=t1)
    t = np.linspace(t0, t1, 200)
    fd = (plus.sample(t)[0] - minus.sample(t)[0]) / (2 * h)
    ex = np.array([db.value(s)[0] for s in t])
    assert np.max(np.abs(fd - ex)) / np.max(np.abs(ex)) < 1e-7


def test_dc_psi_matches_finite_difference(sing):
    # by linearity of the anchor in c, d/dc of the backward tail is the dc solution
    p, T, c = sing.params, sing.tail_T, sing.c_inf
    h = 1e-5 * c
    plus = shooting.tail_solution(p, c + h, T, 0.0, Tolerances(1e-13, 1e-16))
    minus = shooting.tail_solution(p, c - h, T, 0.0, Tolerances(1e-13, 1e-16))
    t_m = math.log(sing.r_match)
    dc = lin.solve_dc_psi(sing, t_min=t_m)
    for t in np.linspace(t_m, sing.tail_T, 5)[:-1]:
        fd = (plus(t)[0] - minus(t)[0]) / (2 * h)
        assert dc.value(t)[0] == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("which", ["gs1", "gs8", "sing"])
def test_morse_index_one(which, request):
    base = request.getfixturevalue(which)
    dc = lin.solve_dc_psi(base)
    assert lin.morse_index(dc) == 1
    assert lin.radial_morse_index(base) == 1
    assert dc.simple_zeros


def test_morse_window_checks(gs1):
    dc = lin.solve_dc_psi(gs1)
    z = dc.zeros[0].x_star
    with pytest.raises(lin.WindowSuspect):
        lin.morse_index(dc, (z - 0.001, z + 5.0))
    assert lin.morse_index(dc, (z + 0.5, 2.0)) == 0
    with pytest.raises(ValueError):
        lin.morse_index(lin.solve_db_psi(gs1))


def test_wronskian_is_liouville_constant(gs8):
    rep = lin.check_independence(lin.solve_db_psi(gs8), lin.solve_dc_psi(gs8))
    assert rep.spread < 1e-6
    assert rep.normalized_margin > 1e-3
    assert rep.sign in (-1, 1)
    assert rep.min_abs > 0


def test_proportional_solutions_have_zero_margin(gs1):
    dc = lin.solve_dc_psi(gs1)
    rep = lin.check_independence(dc, dc)
    assert rep.normalized_margin < 1e-12


def test_no_overlap(gs1):
    db = lin.solve_db_psi(gs1, t_max=-2.0)
    dc = lin.solve_dc_psi(gs1, t_min=0.0)
    with pytest.raises(lin.NoOverlap):
        lin.check_independence(db, dc)


def test_span_checks(gs1):
    with pytest.raises(Exception):
        lin.solve_db_psi(gs1, t_min=-100.0)
    with pytest.raises(Exception):
        lin.solve_dc_psi(gs1, t_min=gs1.tail_T + 1.0)


def test_theta_prime_recomputed():
    theta = heteroclinic.solve_theta(13)
    tp = lin.solve_theta_prime(theta, 13, t_min=-8.0, t_max=3.0)
    for t in (-6.0, -1.0, 0.5, 2.5):
        assert tp.value(t)[0] == pytest.approx(theta(t)[1], rel=1e-6, abs=1e-10)


def test_tail_sign(gs8):
    ok, sign = lin.tail_sign_constant(lin.solve_dc_psi(gs8), 0.3, gs8.b)
    assert ok and sign == -1


def test_scaling_reports_shape(gs8):
    theta = heteroclinic.solve_theta(13)
    rep = lin.check_db_scaling(13, [8.0, 16.0], [gs8.lam, shooting.solve_lambda(13, 16.0).lam], theta)
    assert len(rep.errors) == 2 and len(rep.ratios) == 1
    assert rep.within(1 / 16, 1 / 4)


def test_shifted_shot_reproduces_ground_state(gs8):
    psi_s, db_s = lin.shifted_db_psi(13, 8.0, gs8.lam)
    for s in (-3.0, -0.5):
        assert psi_s(s)[0] == pytest.approx(gs8.psi(s - math.log(8.0))[0], rel=1e-7)
