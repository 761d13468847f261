import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson

from gpmorse import observables as obs, shooting
from gpmorse.shooting import CurvePoint


@pytest.fixture(scope="module")
def gs1():
    return shooting.solve_lambda(13, 1.0)


@pytest.fixture(scope="module")
def sing():
    return shooting.solve_lambda_inf(13)


def _integrals(gs, n=20001):
    lo, hi = gs.profile.span
    r = np.linspace(lo, hi, n)
    u, up = gs.profile.sample(r)
    w = r ** (gs.d - 1)
    K = simpson(up * up * w, x=r)
    V = simpson(r * r * u * u * w, x=r)
    P = simpson(u ** 4 * w, x=r)
    M = simpson(u * u * w, x=r)
    return K, V, P, M


@pytest.mark.parametrize("b", [0.5, 1.0, 4.0])
def test_virial_identities(b):
    # multiplying the equation by u and by r u' gives two exact integral relations
    gs = shooting.solve_lambda(13, b)
    d, lam = gs.d, gs.lam
    K, V, P, M = _integrals(gs)
    scale = K + V + P + lam * M
    assert abs(K + V - P - lam * M) / scale < 1e-8
    poho = -(d - 2) / 2 * K - (d + 2) / 2 * V + d / 4 * P + d * lam / 2 * M
    assert abs(poho) / scale < 1e-8
    assert obs.energy(gs) == pytest.approx(K + V - P / 2, rel=1e-8)
    assert obs.mass(gs) == pytest.approx(M, rel=1e-8)


def test_r_and_t_quadratures_agree(gs1, sing):
    for st_ in (gs1, sing):
        assert obs.mass_t(st_) == pytest.approx(obs.mass(st_), rel=1e-9)
        assert obs.energy_t(st_) == pytest.approx(obs.energy(st_), rel=1e-8)


def test_quadrature_converged(gs1, sing):
    for st_ in (gs1, sing):
        assert obs.mass(st_, 16001) == pytest.approx(obs.mass(st_), rel=1e-11)
        assert obs.energy(st_, 16001) == pytest.approx(obs.energy(st_), rel=1e-10)


def test_small_amplitude_mass():
    # u ~ b e^{-r^2/2}: M ~ b^2 Gamma(d/2) / 2
    b = 0.05
    gs = shooting.solve_lambda(13, b)
    assert obs.mass(gs) == pytest.approx(b * b * math.gamma(6.5) / 2, rel=1e-2)


def test_action_and_stationarity(gs1):
    assert obs.action(gs1) == pytest.approx(obs.energy(gs1) - gs1.lam * obs.mass(gs1), rel=1e-14)
    assert obs.stationarity_residual(gs1) < 1e-7


def test_stationarity_detects_wrong_lambda(gs1):
    wrong = shooting.GroundState(**{**gs1.__dict__, "lam": gs1.lam + 0.01})
    assert obs.stationarity_residual(wrong) > 1e-4


def test_bump():
    r = np.linspace(0, 3, 3001)
    phi, dphi = obs.bump(r)
    assert np.all(phi[(r <= 0.5) | (r >= 2.5)] == 0)
    assert np.max(phi) == pytest.approx(math.exp(-1), rel=1e-6)
    fd = np.gradient(phi, r)
    assert np.max(np.abs(fd - dphi)) < 1e-4


def _pts(bs, lams, masses):
    return [CurvePoint(b, l, m, 0.0) for b, l, m in zip(bs, lams, masses)]


def test_mass_curve_report():
    pts = _pts([1, 2, 4], [12.9, 12.8, 12.7], [10.0, 20.0, 30.0])
    rep = obs.mass_curve(pts, 40.0)
    assert rep.verdict == "stable-slope"
    assert rep.slopes == pytest.approx((-100.0, -100.0))
    assert rep.distance_decreasing_in_b
    assert rep.note == obs.VK_NOTE
    bad = obs.mass_curve(_pts([1, 2, 4], [12.9, 12.8, 12.7], [10.0, 30.0, 20.0]))
    assert bad.verdict == "unstable-slope"
    with pytest.raises(obs.DegenerateSpacing):
        obs.mass_curve(_pts([1, 2, 4], [12.9, 12.9, 12.7], [1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        obs.mass_curve(_pts([1, 2], [1, 2], [1, 2]))


@settings(max_examples=30)
@given(signs=st.lists(st.sampled_from([-1.0, 1.0]), min_size=2, max_size=20))
def test_oscillation_count_counts_sign_changes(signs):
    pts = _pts(range(1, len(signs) + 1), [10 + 0.1 * s for s in signs], [0.0] * len(signs))
    expect = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    assert obs.oscillation_count(pts, 10.0) == expect


def test_lambda_prime_sign_changes():
    pts = _pts([1, 2, 3, 4, 5], [1.0, 2.0, 1.5, 1.7, 1.8], [0] * 5)
    assert obs.lambda_prime_sign_changes(pts) == 2
