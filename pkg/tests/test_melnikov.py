import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pendrot import melnikov as M
from pendrot.model import CouplingFunction, CouplingTerm, SystemParams
from pendrot.neighborhoods import GridField, diameter_cap

ARNOLD = CouplingFunction.arnold()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(-3, 3), st.floats(-10, 10), st.floats(-10, 10), st.floats(-1, 1))
def test_constant_coupling_closed_form(eps, omega, t0, v0, c):
    p = SystemParams(eps, 0.0, CouplingFunction.constant(c))
    assert M.melnikov_primitive(p, omega, t0, v0) == pytest.approx(-4 * np.sqrt(eps) * c, abs=1e-10)


def test_oracle_agreement_reference_point():
    p = SystemParams(1.0, 0.01, ARNOLD)
    assert M.melnikov_primitive(p, 1.0, 0.0, 0.0) == pytest.approx(M.melnikov_oracle(p, 1.0, 0.0, 0.0), abs=1e-8)


def test_oracle_agreement_u_dependent_coupling(rng):
    f = CouplingFunction((CouplingTerm(0.3, 1, 1, 0, 0.4), CouplingTerm(0.3, 2, 0, 1), CouplingTerm(0.2, 0, 2, -1)))
    p = SystemParams(0.5, 0.01, f)
    for _ in range(5):
        w, t0, v0 = rng.uniform(-2, 2), rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
        assert M.melnikov_primitive(p, w, t0, v0) == pytest.approx(M.melnikov_oracle(p, w, t0, v0), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi), st.floats(0.2, 2.0))
def test_periodicity(t0, v0, omega):
    p = SystemParams(0.64, 0.01, ARNOLD)
    a = M.melnikov_primitive(p, omega, t0, v0)
    assert M.melnikov_primitive(p, omega, t0 + 2 * np.pi, v0) == pytest.approx(a, abs=1e-12)
    assert M.melnikov_primitive(p, omega, t0, v0 + 2 * np.pi) == pytest.approx(a, abs=1e-12)


def test_step_halving_converged():
    p = SystemParams(0.64, 0.01, ARNOLD)
    c = M.melnikov_coefficients(p, 1.0)
    a = M.melnikov_primitive(p, 1.0, 0.7, 1.1, step=c.step)
    b = M.melnikov_primitive(p, 1.0, 0.7, 1.1, step=c.step / 2)
    assert abs(a - b) < 1e-10


def test_linearity_and_mu_independence():
    f1 = CouplingFunction((CouplingTerm(0.5, 0, 1, 0),))
    f2 = CouplingFunction((CouplingTerm(0.5, 0, 0, 1),))
    a = M.scan_field(SystemParams(0.64, 0.01, f1), 1.0, 16, 16).values
    b = M.scan_field(SystemParams(0.64, 0.01, f2), 1.0, 16, 16).values
    s = M.scan_field(SystemParams(0.64, 0.01, ARNOLD), 1.0, 16, 16).values
    assert np.max(np.abs(a + b - s)) < 1e-12
    s2 = M.scan_field(SystemParams(0.64, 0.03, ARNOLD), 1.0, 16, 16).values
    assert np.array_equal(s, s2)


def test_scan_field_properties():
    const = M.scan_field(SystemParams(0.64, 0.0, CouplingFunction.constant(0.5)), 1.0, 8, 8).values
    assert np.ptp(const) < 1e-12
    p = SystemParams(0.64, 0.01, ARNOLD)
    coarse = M.scan_field(p, 1.0, 16, 16)
    assert coarse.values.min() < coarse.values.mean() < coarse.values.max()
    fine = M.scan_field(p, 1.0, 32, 32)
    assert np.max(np.abs(fine.values[::2, ::2] - coarse.values)) < 1e-12
    with pytest.raises(Exception):
        M.scan_field(p, 1.0, 4, 16)


def test_minima_flat_field_fails():
    fld = M.scan_field(SystemParams(0.64, 0.0, CouplingFunction.constant(0.5)), 1.0, 16, 16)
    g = M.find_minima_with_gap(fld)
    assert not g.passed and g.delta == 0.0


def test_minima_synthetic_field():
    n = 64
    d = 2 * np.pi / n
    tt, vv = np.meshgrid(d * np.arange(n), d * np.arange(n), indexing="ij")
    fld = GridField(np.cos(tt) + np.cos(vv), 0.0, 0.0, d, d, True, 1.0, None, "M", None)
    g = M.find_minima_with_gap(fld)
    assert len(g.minima) == 1
    assert (g.minima[0].t0, g.minima[0].v0) == pytest.approx((np.pi, np.pi))
    # largest non-wrapping sublevel set is {cos t + cos v <= 0}: gap 2 = 4 * (1/2)
    assert g.delta == pytest.approx(0.5, abs=1e-12)
    assert g.passed


def test_minima_arnold_pass():
    p = SystemParams(1.0, 0.01, ARNOLD)
    g = M.find_minima_with_gap(M.scan_field(p, 1.0, 32, 32), epsilon=1.0)
    assert g.passed and g.delta > 0
    assert g.R <= diameter_cap(1.0)


def test_check_S2():
    p = SystemParams(0.64, 0.01, ARNOLD)
    rep = M.check_S2(p, 0.5, 1.5, 3, 32, 32)
    assert rep.passed and rep.delta0_tilde > 0 and rep.R * np.sqrt(0.64) <= 1 / 144
    for w, g in zip(rep.omegas, rep.per_omega):
        direct = M.find_minima_with_gap(M.scan_field(p, w, 32, 32), epsilon=0.64)
        assert direct.delta == g.delta
    single = M.check_S2(p, 1.0, 1.0, 5, 32, 32)
    direct = M.find_minima_with_gap(M.scan_field(p, 1.0, 32, 32), epsilon=0.64)
    assert single.omegas == [1.0] and single.delta0_tilde == direct.delta


def test_check_S2_zero_coupling_fails():
    rep = M.check_S2(SystemParams(0.64, 0.0, CouplingFunction.zero()), 0.5, 1.5, 2, 16, 16)
    assert not rep.passed
