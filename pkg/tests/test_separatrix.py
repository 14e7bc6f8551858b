import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pendrot import InvalidInput
from pendrot.model import CouplingFunction, SystemParams, grad_potential
from pendrot.separatrix import (
    build_supersub,
    build_supersub_tilde,
    separatrix_curve,
    separatrix_u,
    separatrix_ut,
    stationary_margin,
    verify_stationary_supersolution,
)

ARNOLD = CouplingFunction.arnold()


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1.0))
def test_separatrix_centre(eps):
    assert separatrix_u(eps, 0.0) == pytest.approx(np.pi, abs=1e-15)


def test_separatrix_tail_bound():
    t = np.linspace(0.0, 30.0, 301)
    assert np.all(2 * np.pi - separatrix_u(1.0, t) <= 4 * np.exp(-t) + 1e-15)


def test_separatrix_derivative(rng):
    eps = 0.49
    t = rng.uniform(-10, 10, 100)
    h = 1e-5
    fd = (separatrix_u(eps, t + h) - separatrix_u(eps, t - h)) / (2 * h)
    assert np.max(np.abs(fd - separatrix_ut(eps, t))) < 1e-8


def test_separatrix_energy_identity():
    eps = 0.64
    t = np.linspace(-40, 40, 4001)
    u, ut = separatrix_u(eps, t), separatrix_ut(eps, t)
    assert np.max(np.abs(0.5 * ut**2 - eps * (1 - np.cos(u)))) < 1e-10


def test_separatrix_no_overflow():
    u = separatrix_u(1.0, np.array([-1e4, 1e4]))
    assert u[0] == 0.0 and u[1] == pytest.approx(2 * np.pi)
    with pytest.raises(InvalidInput):
        separatrix_u(0.0, 1.0)


PARAMS = [(1.0, 1 / 16), (0.64, 0.01), (0.25, 0.01)]


@pytest.mark.parametrize("eps,mu", PARAMS)
def test_supersub_anchor_and_continuity(eps, mu):
    zm, zp = build_supersub(SystemParams(eps, mu, ARNOLD))
    assert zm(0.0)[0] == pytest.approx(np.pi, abs=1e-10)
    assert zp(0.0)[0] == pytest.approx(np.pi, abs=1e-10)
    for c in (zm, zp):
        for jz, jzt, _ in c.breakpoint_jumps():
            assert jz < 1e-10 and jzt < 1e-10
    se = np.sqrt(eps)
    info = zp.info
    assert -np.sqrt(mu) < info["t0"] < 0 and 0 < info["t1"] <= 2 * np.sqrt(mu / eps)
    t = np.linspace(-0.75 / se, 20 / se, 20001)
    assert np.all(np.diff(zp(t)) > 0)
    assert np.all(np.diff(zm(-t)) < 0)


def test_supersub_close_to_separatrix():
    eps, mu = 0.64, 0.01
    zm, _ = build_supersub(SystemParams(eps, mu, ARNOLD))
    t = np.linspace(-40, 0.75 / np.sqrt(eps), 20001)
    C = np.max(np.abs(zm(t) - separatrix_u(eps, t))) / np.sqrt(eps * mu)
    print(f"measured |z- - u|/sqrt(eps mu) = {C:.4f}")
    assert np.isfinite(C) and C < 10


def test_supersub_slope_near_centre():
    eps, mu = 0.64, 0.01
    zm, zp = build_supersub(SystemParams(eps, mu, ARNOLD))
    se = np.sqrt(eps)
    t = np.linspace(-0.25 / se, 0.25 / se, 2001)[1:-1]
    assert np.all(zp.evaluate(t)[1] > se / 2)
    assert np.all(zm.evaluate(t)[1] > se / 2)


@pytest.mark.parametrize("eps,mu", PARAMS)
def test_supersub_exponential_tail(eps, mu):
    zm, _ = build_supersub(SystemParams(eps, mu, ARNOLD))
    se = np.sqrt(eps)
    t = np.linspace(-40 / se, 0.0, 20001)
    c2 = np.max(np.abs(zm(t)) * np.exp(0.5 * se * np.abs(t)))
    print(f"eps={eps} mu={mu}: c2 = {c2:.4f}")
    assert c2 <= 10


def test_supersub_mu_zero_is_separatrix():
    zm, zp = build_supersub(SystemParams(0.5, 0.0))
    t = np.linspace(-10, 1, 101)
    assert np.max(np.abs(zm(t) - separatrix_u(0.5, t))) < 1e-15


@pytest.mark.parametrize("eps,mu", PARAMS)
def test_supersub_verifier_margins(eps, mu):
    p = SystemParams(eps, mu, ARNOLD)
    zm, zp = build_supersub(p)
    for c in (zm, zp):
        rep = verify_stationary_supersolution(p, c)
        assert rep.passed and rep.min_margin > 0, rep.as_dict()


def test_verifier_separatrix():
    p = SystemParams(0.64, 0.01, ARNOLD)
    curve = separatrix_curve(0.64)
    rep = verify_stationary_supersolution(p, curve)
    assert not rep.passed and rep.min_margin < 0
    # pointwise residual z_tt - V_u(z, v, t) takes both signs over (v, t)
    t = np.linspace(-5, 5, 401)
    z, _, ztt = curve.evaluate(t)
    signs = set()
    for v0 in np.linspace(0, 2 * np.pi, 9):
        r = ztt - grad_potential(p, z, v0 + t, t)[0]
        signs |= set(np.sign(r[np.abs(r) > 1e-9]))
    assert signs == {-1.0, 1.0}
    p0 = SystemParams(0.64, 0.0)
    rep0 = verify_stationary_supersolution(p0, separatrix_curve(0.64))
    assert abs(rep0.min_margin) <= 1e-9 and abs(rep0.max_margin) <= 1e-9


def test_verifier_margin_shrinks_with_mu():
    eps = 0.64
    worst = []
    for mu in (0.04, 0.01, 0.0025):
        p = SystemParams(eps, mu, ARNOLD)
        _, zp = build_supersub(p)
        t = np.linspace(-0.75 / np.sqrt(eps), 10, 5001)[1:-1]
        worst.append(np.max(np.abs(stationary_margin(p, zp, t))))
    assert worst[0] > worst[1] > worst[2]


def test_verifier_rejects_outside_domain():
    p = SystemParams(0.64, 0.01, ARNOLD)
    zm, _ = build_supersub(p)
    with pytest.raises(InvalidInput):
        verify_stationary_supersolution(p, zm, (0.0, 5.0))


def test_supersub_tilde():
    eps, mu = 0.64, 0.01
    p = SystemParams(eps, mu, ARNOLD)
    ztm, ztp, T = build_supersub_tilde(p)
    assert ztp(0.0)[0] == pytest.approx(np.pi, abs=1e-12)
    assert ztm(0.0)[0] == pytest.approx(np.pi, abs=1e-12)
    assert ztp(T)[0] - 2 * np.pi == pytest.approx(np.sqrt(eps * mu), abs=1e-10)
    t = np.linspace(0, T, 5001)
    C = np.max(np.abs(ztp(t) - separatrix_u(eps, t))) / np.sqrt(eps * mu)
    print(f"T_tilde = {T:.4f}, T constant = {ztp.info['T_constant']:.4f}, C = {C:.4f}")
    assert np.isfinite(C)
    rep = verify_stationary_supersolution(p, ztp, (0.0, T))
    assert rep.passed


def test_supersub_tilde_needs_mu():
    with pytest.raises(InvalidInput):
        build_supersub_tilde(SystemParams(0.64, 0.0))


def test_ordering_sandwich():
    p = SystemParams(0.64, 0.01, ARNOLD)
    zm, zp = build_supersub(p)
    ztm, ztp, T = build_supersub_tilde(p)
    t = np.linspace(0.0, min(T, 0.75 / np.sqrt(0.64)), 2001)
    assert np.all(ztm(-t) <= zm(-t) + 1e-12)
    assert np.all(zp(t) <= ztp(t) + 1e-12)
