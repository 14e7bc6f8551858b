"""Relaxation flow q_s = q_tt - grad V on a truncated t-window, and the norms it is measured in.

Time stepping is the second-order IMEX Runge-Kutta scheme ARS(2,2,2): an
L-stable two-stage SDIRK for q_tt and an explicit two-stage rule for the
potential force.  Both implicit stages share one tridiagonal factorization
(applied to u and v together).  Equilibria of the scheme are exactly the
discrete Euler-Lagrange solutions.

Boundary nodes: ``clamped`` ends are held fixed (q_s = 0 there); ``free`` ends
use the natural boundary condition of the discrete action with half weight,
q_tt(t_0) ~ 2 (q_1 - q_0) / dt^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lapack
from scipy.signal import lfilter

from .errors import InternalError, InvalidInput
from .model import SystemParams, el_residual, grad_potential, potential
from .trajectory import Trajectory


# ---------------------------------------------------------------- operators
def _second_difference(x: np.ndarray, dt: float, left: str, right: str) -> np.ndarray:
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / (dt * dt)
    d[0] = 0.0 if left == "clamped" else 2.0 * (x[1] - x[0]) / (dt * dt)
    d[-1] = 0.0 if right == "clamped" else 2.0 * (x[-2] - x[-1]) / (dt * dt)
    return d


def _force(params: SystemParams, q: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    fu, fv = grad_potential(params, q.u, q.v, q.t)
    fu, fv = -fu, -fv
    if q.left.kind == "clamped":
        fu[0] = fv[0] = 0.0
    if q.right.kind == "clamped":
        fu[-1] = fv[-1] = 0.0
    return fu, fv


def rhs(params: SystemParams, q: Trajectory) -> Trajectory:
    """q_s = q_tt - grad V at every node (zero at clamped nodes)."""
    if q.n < 3:
        raise InvalidInput("rhs needs at least 3 grid points")
    lk, rk = q.left.kind, q.right.kind
    fu, fv = _force(params, q)
    ru = _second_difference(q.u, q.dt, lk, rk) + fu
    rv = _second_difference(q.v, q.dt, lk, rk) + fv
    return q.replace(u=ru, v=rv)


def discrete_action(params: SystemParams, q: Trajectory, omega: float | None = None) -> float:
    """sum dt [ |q_{i+1}-q_i|^2/(2 dt^2) + w_i V(q_i, t_i) ], w = 1/2 at free ends.

    With ``omega`` the kinetic v-term uses (v_{i+1}-v_i-omega dt); on a fixed
    window this only adds a boundary term and leaves the gradient unchanged.
    """
    dt = q.dt
    du = np.diff(q.u)
    dv = np.diff(q.v) - (0.0 if omega is None else omega * dt)
    w = np.ones(q.n)
    w[0] = 0.5 if q.left.kind == "free" else 1.0
    w[-1] = 0.5 if q.right.kind == "free" else 1.0
    pot = potential(params, q.u, q.v, q.t)
    return float(np.sum(du * du + dv * dv) / (2.0 * dt) + dt * np.dot(w, pot))


def action_gradient(params: SystemParams, q: Trajectory) -> Trajectory:
    """dA/dq_i of :func:`discrete_action`, assembled term by term."""
    dt = q.dt
    gu = np.zeros(q.n)
    gv = np.zeros(q.n)
    du = np.diff(q.u) / dt
    dv = np.diff(q.v) / dt
    gu[:-1] -= du
    gu[1:] += du
    gv[:-1] -= dv
    gv[1:] += dv
    w = np.ones(q.n)
    w[0] = 0.5 if q.left.kind == "free" else 1.0
    w[-1] = 0.5 if q.right.kind == "free" else 1.0
    vu, vv = grad_potential(params, q.u, q.v, q.t)
    gu += dt * w * vu
    gv += dt * w * vv
    return q.replace(u=gu, v=gv)


def lipschitz_bound(params: SystemParams) -> float:
    """Row-sum bound on the Hessian of V over all (u, v, t)."""
    eps, mu = params.epsilon, params.mu
    a = np.array([abs(c.amplitude) for c in params.coupling.terms] or [0.0])
    m = np.array([abs(c.freq_u) for c in params.coupling.terms] or [0])
    n = np.array([abs(c.freq_v) for c in params.coupling.terms] or [0])
    uu = 1.0 + mu * (np.sum(a) + 2 * np.sum(a * m) + 2 * np.sum(a * m * m))
    uv = mu * (np.sum(a * n) + 2 * np.sum(a * m * n))
    vv = 2 * mu * np.sum(a * n * n)
    return float(eps * max(uu + uv, uv + vv))


def stable_step(params: SystemParams) -> float:
    """ds <= 1 / (2 Lip(grad V))."""
    return 0.5 / lipschitz_bound(params)


# ---------------------------------------------------------------- stepping
@dataclass
class FlowState:
    q: Trajectory
    s: float = 0.0
    step_count: int = 0
    last_rhs_norm: float = float("nan")


GAMMA = 1.0 - 1.0 / math.sqrt(2.0)
DELTA = 1.0 - 1.0 / (2.0 * GAMMA)


class Stepper:
    """ARS(2,2,2) stepper; the factorization of I - gamma*ds*D is cached per (n, dt, ds, ends)."""

    def __init__(self, params: SystemParams):
        self.params = params
        self._key = None
        self._lu = None

    def _factor(self, q: Trajectory, ds: float):
        key = (q.n, q.dt, ds, q.left.kind, q.right.kind)
        if key == self._key:
            return self._lu
        n, r = q.n, GAMMA * ds / (q.dt * q.dt)
        d = np.full(n, 1.0 + 2.0 * r)
        dl = np.full(n - 1, -r)
        du = np.full(n - 1, -r)
        if q.left.kind == "clamped":
            d[0], du[0] = 1.0, 0.0
        else:
            du[0] = -2.0 * r
        if q.right.kind == "clamped":
            d[-1], dl[-1] = 1.0, 0.0
        else:
            dl[-1] = -2.0 * r
        dl_, d_, du_, du2, ipiv, info = lapack.dgttrf(dl, d, du)
        if info != 0:
            raise InternalError(f"tridiagonal factorization failed (info={info})")
        self._key = key
        self._lu = (dl_, d_, du_, du2, ipiv)
        return self._lu

    def _solve(self, lu, b: np.ndarray) -> np.ndarray:
        x, info = lapack.dgttrs(*lu, b)
        if info != 0:
            raise InternalError(f"tridiagonal solve failed (info={info})")
        return x

    def _lap(self, q: Trajectory, x: np.ndarray) -> np.ndarray:
        lk, rk = q.left.kind, q.right.kind
        return np.column_stack(
            [_second_difference(x[:, 0], q.dt, lk, rk), _second_difference(x[:, 1], q.dt, lk, rk)]
        )

    def step(self, state: FlowState, ds: float) -> FlowState:
        if not ds > 0:
            raise InvalidInput("ds must be positive")
        q = state.q
        lu = self._factor(q, ds)
        x = np.column_stack([q.u, q.v])
        f1 = np.column_stack(_force(self.params, q))
        y2 = self._solve(lu, x + GAMMA * ds * f1)
        f2 = np.column_stack(_force(self.params, q.replace(u=y2[:, 0], v=y2[:, 1])))
        b3 = x + ds * (DELTA * f1 + (1.0 - DELTA) * f2 + (1.0 - GAMMA) * self._lap(q, y2))
        z = self._solve(lu, b3)
        if not np.all(np.isfinite(z)):
            raise InternalError("non-finite state after step")
        return FlowState(q.replace(u=z[:, 0].copy(), v=z[:, 1].copy()), state.s + ds, state.step_count + 1)


def step(params: SystemParams, state: FlowState, ds: float) -> FlowState:
    return Stepper(params).step(state, ds)


# ---------------------------------------------------------------- norms
def _trap_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _derivative(x: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(x, dt, edge_order=2)


def _exp_window_sums(g: np.ndarray, dt: float, rate: float = 1.0) -> np.ndarray:
    """sum_i w_i exp(-rate |t_i - t_j|) g_i for every node j (trapezoid weights)."""
    a = math.exp(-rate * dt)
    x = g * _trap_weights(g.size, dt)
    fwd = lfilter([1.0], [1.0, -a], x)
    bwd = lfilter([1.0], [1.0, -a], x[::-1])[::-1]
    return fwd + bwd - x


def ul_norm(q: Trajectory, t_ref: float = 0.0) -> float:
    """(|q(t_ref)|^2 + sup_y int e^{-|t-y|} (q_t^2 + q_tt^2) dt)^(1/2), y over grid nodes."""
    ut, vt = _derivative(q.u, q.dt), _derivative(q.v, q.dt)
    utt, vtt = _derivative(ut, q.dt), _derivative(vt, q.dt)
    g = ut**2 + vt**2 + utt**2 + vtt**2
    sup = float(np.max(_exp_window_sums(g, q.dt)))
    tr = min(max(t_ref, q.t_lo), q.t_hi)
    u0, v0 = q.interp(tr)
    return math.sqrt(float(u0) ** 2 + float(v0) ** 2 + sup)


def loc_norm(q: Trajectory, center: float = 0.0) -> float:
    """(int e^{-|t-center|} (q^2 + q_t^2) dt)^(1/2) by the trapezoid rule."""
    ut, vt = _derivative(q.u, q.dt), _derivative(q.v, q.dt)
    g = q.u**2 + q.v**2 + ut**2 + vt**2
    w = _trap_weights(q.n, q.dt) * np.exp(-np.abs(q.t - center))
    return math.sqrt(float(np.dot(w, g)))


def weighted_action(
    params: SystemParams, q: Trajectory, delta: float, center: float = 0.0, omega: float | None = None
) -> float:
    """E_delta = int e^{-delta|t|} L dt with L = q_t^2/2 + V (speed-adjusted if ``omega``)."""
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    ut, vt = _derivative(q.u, q.dt), _derivative(q.v, q.dt)
    if omega is not None:
        vt = vt - omega
    lag = 0.5 * (ut**2 + vt**2) + potential(params, q.u, q.v, q.t)
    w = _trap_weights(q.n, q.dt) * np.exp(-delta * np.abs(q.t - center))
    return float(np.dot(w, lag))


def weighted_dissipation(params: SystemParams, q: Trajectory, delta: float, center: float = 0.0) -> float:
    """D_delta = int e^{-delta|t|} q_s^2 dt with q_s from :func:`rhs`."""
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    r = rhs(params, q)
    w = _trap_weights(q.n, q.dt) * np.exp(-delta * np.abs(q.t - center))
    return float(np.dot(w, r.u**2 + r.v**2))


# ---------------------------------------------------------------- translations
def translate(q: Trajectory, y: float) -> Trajectory:
    """Samples of t -> q(t + y) on the same grid; y must be a multiple of dt.

    Nodes shifted in from outside copy the end value of u and extend v linearly.
    """
    m_f = y / q.dt
    m = int(round(m_f))
    if abs(m_f - m) > 1e-9 * max(1.0, abs(m_f)):
        raise InvalidInput(f"shift {y} is not a multiple of dt={q.dt}")
    if m == 0:
        return q.copy()
    idx = np.arange(q.n) + m
    lo = np.clip(idx, 0, q.n - 1)
    u = q.u[lo].copy()
    v = q.v[lo].copy()
    s_lo = (q.v[1] - q.v[0]) / q.dt
    s_hi = (q.v[-1] - q.v[-2]) / q.dt
    below, above = idx < 0, idx > q.n - 1
    v[below] += s_lo * (idx[below]) * q.dt
    v[above] += s_hi * (idx[above] - (q.n - 1)) * q.dt
    return q.replace(u=u, v=v)


def commutation_check(
    params: SystemParams, q: Trajectory, y: float, ds: float, margin: float | None = None
) -> float:
    """loc-norm (centred mid-window) of step(translate(q)) - translate(step(q)).

    Nodes within ``margin`` of either end plus |y| are zeroed first (default:
    a quarter of the window).
    """
    st = Stepper(params)
    a = st.step(FlowState(translate(q, y)), ds).q
    b = translate(st.step(FlowState(q), ds).q, y)
    t = q.t
    span = q.t_hi - q.t_lo
    mg = 0.25 * span if margin is None else float(margin)
    keep = (t >= q.t_lo + mg + abs(y)) & (t <= q.t_hi - mg - abs(y))
    d = q.replace(u=np.where(keep, a.u - b.u, 0.0), v=np.where(keep, a.v - b.v, 0.0))
    return loc_norm(d, center=0.5 * (q.t_lo + q.t_hi))


# ---------------------------------------------------------------- relaxation
@dataclass
class Certificate:
    converged: bool
    reason: str
    el_residual: float
    rhs_norm: float
    trace: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "reason": self.reason,
            "el_residual": self.el_residual,
            "rhs_norm": self.rhs_norm,
            "trace_len": len(self.trace),
        }


def interior_el_residual(params: SystemParams, q: Trajectory) -> float:
    r = el_residual(params, q)
    return float(max(np.abs(r.u[1:-1]).max(), np.abs(r.v[1:-1]).max()))


def relax(
    params: SystemParams,
    q0: Trajectory,
    tol: float = 1e-6,
    s_max: float = math.inf,
    ds: float | None = None,
    max_steps: int = 10**6,
    norm: str = "loc",
    center: float = 0.0,
    trace_every: int = 100,
    callback: Callable[[FlowState], None] | None = None,
    callback_every: int = 100,
    min_s: float = 0.0,
) -> tuple[FlowState, Certificate]:
    """Step until the rhs norm drops to ``tol`` (and s >= min_s), s reaches s_max, or max_steps.

    ``norm`` is ``"loc"`` (centred at ``center``) or ``"ul"``.  ``callback`` sees
    the state at s = 0 and every ``callback_every`` steps.
    """
    if norm not in ("loc", "ul"):
        raise InvalidInput(f"unknown norm {norm!r}")
    ds = stable_step(params) if ds is None else float(ds)
    if not ds > 0:
        raise InvalidInput("ds must be positive")

    def measure(q):
        r = rhs(params, q)
        return ul_norm(r, center) if norm == "ul" else loc_norm(r, center)

    stepper = Stepper(params)
    state = FlowState(q0.copy(), 0.0, 0)
    trace: list[dict] = []

    def record(st: FlowState, rn: float):
        r = rhs(params, st.q)
        trace.append(
            {
                "s": st.s,
                "step": st.step_count,
                "ul_rhs": ul_norm(r, center),
                "loc_rhs": loc_norm(r, center),
                "action": discrete_action(params, st.q),
            }
        )

    rn = measure(state.q)
    state.last_rhs_norm = rn
    record(state, rn)
    if callback is not None:
        callback(state)
    reason = "tolerance"
    while not (rn <= tol and state.s >= min_s):
        if state.step_count >= max_steps:
            reason = "max_steps"
            break
        if state.s >= s_max - 1e-12 * max(1.0, s_max):
            reason = "s_max"
            break
        h = min(ds, s_max - state.s) if math.isfinite(s_max) else ds
        state = stepper.step(state, h)
        n = state.step_count
        if n % trace_every == 0 or (callback is not None and n % callback_every == 0):
            rn = measure(state.q)
        else:
            rn = math.inf if n % 10 else measure(state.q)
        state.last_rhs_norm = rn
        if n % trace_every == 0:
            record(state, rn)
        if callback is not None and n % callback_every == 0:
            callback(state)
    if not math.isfinite(rn):
        rn = measure(state.q)
        state.last_rhs_norm = rn
    converged = rn <= tol and state.s >= min_s
    if not converged and reason == "tolerance":
        reason = "s_max"
    cert = Certificate(bool(converged), reason if not converged else "tolerance",
                       interior_el_residual(params, state.q), rn, trace)
    return state, cert
