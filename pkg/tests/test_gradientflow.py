import math

import numpy as np
import pytest

from pendrot import InvalidInput
from pendrot import gradientflow as G
from pendrot.model import CouplingFunction, SystemParams, el_residual
from pendrot.separatrix import separatrix_u
from pendrot.trajectory import BoundaryCondition, Trajectory

ARNOLD = CouplingFunction.arnold()


def torus(omega=1.0, t_lo=-10.0, t_hi=10.0, n=401, kind="clamped"):
    t = np.linspace(t_lo, t_hi, n)
    bc = BoundaryCondition(kind, 0, omega)
    return Trajectory.from_grid(t, np.zeros(n), omega * t, left=bc, right=bc)


def test_rhs_zero_on_torus():
    p = SystemParams(0.64, 0.05, ARNOLD)
    r = G.rhs(p, torus())
    # v = omega t is exact up to roundoff of order 1e-16 |v| / dt^2
    assert np.max(np.abs(r.u)) == 0.0 and np.max(np.abs(r.v)) < 1e-11


def test_rhs_small_on_separatrix():
    eps = 0.64
    p = SystemParams(eps, 0.0)
    q = Trajectory.from_grid(np.linspace(-15, 15, 3001), separatrix_u(eps, np.linspace(-15, 15, 3001)), np.zeros(3001))
    r = G.rhs(p, q)
    assert np.max(np.abs(r.u[1:-1])) < 1e-4


def test_rhs_is_minus_scaled_gradient(rng):
    p = SystemParams(0.64, 0.1, ARNOLD)
    for kind in ("clamped", "free"):
        q = torus(kind=kind, n=81)
        q = q.replace(u=q.u + 0.3 * rng.standard_normal(q.n), v=q.v + 0.3 * rng.standard_normal(q.n))
        r = G.rhs(p, q)
        g = G.action_gradient(p, q)
        w = np.full(q.n, q.dt)
        if kind == "free":
            w[0] = w[-1] = 0.5 * q.dt
        sl = slice(1, -1) if kind == "clamped" else slice(None)
        assert np.allclose(r.u[sl], -g.u[sl] / w[sl], atol=1e-10)
        assert np.allclose(r.v[sl], -g.v[sl] / w[sl], atol=1e-10)


def test_action_gradient_matches_fd(rng):
    p = SystemParams(0.64, 0.1, ARNOLD)
    q = torus(kind="free", n=31)
    q = q.replace(u=q.u + 0.3 * rng.standard_normal(q.n))
    g = G.action_gradient(p, q)
    h = 1e-6
    for i in (0, 7, 30):
        e = np.zeros(q.n)
        e[i] = h
        fd = (G.discrete_action(p, q.replace(u=q.u + e)) - G.discrete_action(p, q.replace(u=q.u - e))) / (2 * h)
        assert g.u[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)
        fd = (G.discrete_action(p, q.replace(v=q.v + e)) - G.discrete_action(p, q.replace(v=q.v - e))) / (2 * h)
        assert g.v[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_discrete_action_omega_shift_only_boundary():
    p = SystemParams(0.64, 0.1, ARNOLD)
    q = torus(omega=1.3, kind="clamped")
    assert G.discrete_action(p, q, omega=1.3) == pytest.approx(0.0, abs=1e-12)


def test_step_fixed_point():
    p = SystemParams(0.64, 0.05, ARNOLD)
    q = torus()
    st = G.Stepper(p)
    out = st.step(G.FlowState(q), 0.3)
    assert np.array_equal(out.q.u, q.u)
    assert np.max(np.abs(out.q.v - q.v)) < 1e-12
    assert out.s == 0.3 and out.step_count == 1
    with pytest.raises(InvalidInput):
        st.step(G.FlowState(q), 0.0)


def _heat_run(ds, s_end=1.0, n=101):
    # with mu = 0 the v-component obeys the discrete heat equation v_s = D v
    p = SystemParams(0.64, 0.0)
    t = np.linspace(0.0, np.pi, n)
    bc = BoundaryCondition("clamped", 0, 0.0)
    q = Trajectory.from_grid(t, np.zeros(n), np.sin(t), left=bc, right=bc)
    st = G.Stepper(p)
    state = G.FlowState(q)
    for _ in range(int(round(s_end / ds))):
        state = st.step(state, ds)
    dt = q.dt
    lam = (2 - 2 * np.cos(dt)) / dt**2
    return np.max(np.abs(state.q.v - np.exp(-lam * s_end) * np.sin(t)))


def test_heat_decay_second_order():
    errs = [_heat_run(ds) for ds in (0.1, 0.05, 0.025)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    print(f"heat errors {errs}, observed orders {orders}")
    assert errs[-1] < 1e-4
    assert all(1.8 < o < 2.3 for o in orders)


def test_stepper_l_stable_on_stiff_mode():
    # a single highest-frequency mode is damped, never amplified, for large ds
    p = SystemParams(0.64, 0.0)
    n = 101
    t = np.linspace(0, 1, n)
    bc = BoundaryCondition("clamped", 0, 0.0)
    v = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    v[0] = v[-1] = 0.0
    q = Trajectory.from_grid(t, np.zeros(n), v, left=bc, right=bc)
    out = G.Stepper(p).step(G.FlowState(q), 10.0)
    assert np.max(np.abs(out.q.v)) < 0.05


def test_relax_returns_to_torus(rng):
    p = SystemParams(0.64, 0.05, ARNOLD)
    q = torus(t_lo=-8, t_hi=8, n=161)
    bump = 0.2 * np.exp(-q.t**2)
    state, cert = G.relax(p, q.replace(u=q.u + bump), tol=1e-8, ds=0.2, s_max=500)
    assert cert.converged and cert.reason == "tolerance"
    assert cert.el_residual < 1e-6
    assert np.max(np.abs(state.q.u)) < 1e-6
    assert cert.trace and cert.trace[0]["s"] == 0.0
    actions = [r["action"] for r in cert.trace]
    assert all(b <= a + 1e-12 for a, b in zip(actions, actions[1:]))
    with pytest.raises(InvalidInput):
        G.relax(p, q, norm="sup")


def test_relax_callback_and_stop():
    p = SystemParams(0.64, 0.05, ARNOLD)
    q = torus(t_lo=-5, t_hi=5, n=101)
    seen = []
    state, cert = G.relax(p, q.replace(u=q.u + 0.1 * np.exp(-q.t**2)), tol=0.0, ds=0.1, s_max=2.0,
                          callback=lambda s: seen.append(s.s), callback_every=5)
    assert not cert.converged and cert.reason == "s_max"
    assert state.s == pytest.approx(2.0)
    assert seen[0] == 0.0 and len(seen) == 5


def test_norms_closed_forms():
    t = np.linspace(-40, 40, 16001)
    q = Trajectory.from_grid(t, np.sin(t), np.zeros_like(t))
    # q(0) = 0 and sup_y int e^{-|t-y|} (cos^2 + sin^2) dt = 2
    assert G.ul_norm(q) == pytest.approx(math.sqrt(2.0), abs=1e-4)
    c = Trajectory.from_grid(t, np.full_like(t, 3.0), np.zeros_like(t))
    assert G.loc_norm(c) == pytest.approx(3.0 * math.sqrt(2.0), abs=1e-4)
    assert G.ul_norm(c) == pytest.approx(3.0, abs=1e-12)


def test_weighted_values_on_torus():
    p = SystemParams(0.64, 0.05, ARNOLD)
    q = torus(omega=1.5, t_lo=-60, t_hi=60, n=12001)
    delta = 0.5
    assert G.weighted_action(p, q, delta, omega=1.5) == pytest.approx(0.0, abs=1e-12)
    # int e^{-delta|t|} omega^2/2 dt = omega^2 / delta
    assert G.weighted_action(p, q, delta) == pytest.approx(1.5**2 / delta, rel=1e-5)
    assert G.weighted_dissipation(p, q, delta) == pytest.approx(0.0, abs=1e-18)
    with pytest.raises(InvalidInput):
        G.weighted_action(p, q, 0.0)


def test_translate_and_commutation():
    p = SystemParams(0.64, 0.05, ARNOLD)
    n = 1001
    dt = 2 * np.pi / 50
    t = -10 * np.pi + dt * np.arange(n)
    u = 0.3 * np.exp(-((t - t.mean()) ** 2) / 4)
    q = Trajectory(float(t[0]), dt, u, 1.0 * t)
    sh = G.translate(q, 5 * dt)
    assert np.array_equal(sh.u[:-5], q.u[5:])
    assert sh.v[-1] == pytest.approx(q.v[-1] + 5 * dt)
    with pytest.raises(InvalidInput):
        G.translate(q, 0.5 * dt)
    per = G.commutation_check(p, q, 2 * np.pi, 0.1)
    off = G.commutation_check(p, q, 13 * dt, 0.1)
    print(f"commutation defect: period shift {per:.3e}, other shift {off:.3e}")
    assert per < 1e-12
    assert off > 1e-6


def test_interior_el_residual_matches_model():
    p = SystemParams(0.64, 0.05, ARNOLD)
    q = torus()
    q = q.replace(u=q.u + 0.01 * np.sin(q.t))
    r = el_residual(p, q)
    assert G.interior_el_residual(p, q) == pytest.approx(max(np.abs(r.u[1:-1]).max(), np.abs(r.v[1:-1]).max()))
