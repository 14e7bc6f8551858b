"""One-sided minimizers, Peierls barriers, heteroclinic gluing and condition (S1).

The discrete action on a uniform grid t_i = t_lo + i*h is

    A = sum_i [(u_{i+1}-u_i)^2 + (v_{i+1}-v_i-omega*h)^2] / (2h) + h * trapz_i V(u_i, v_i, t_i)

minimized with pinned values by a damped Newton iteration.  Unknowns are
interleaved (u_0, v_0, u_1, v_1, ...), so the Hessian is a symmetric band
matrix of half-bandwidth 2 and each Newton step is one banded solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded, solveh_banded, LinAlgError

from .errors import InvalidInput, InvalidNeighborhood, OptimizationFailure
from .model import SystemParams, grad_potential, hess_potential, potential
from .neighborhoods import (
    GapAnalysis,
    GridField,
    Neighborhood,
    analyse_field,
    diameter_cap,
    grow_neighborhoods,
    patch_field,
    polish_minimum,
)
from .separatrix import build_supersub, pendulum_kink
from .trajectory import BoundaryCondition, Trajectory
from . import melnikov

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SolverOptions:
    """Grid and stopping controls, in units of 1/sqrt(eps)."""

    step: float = 0.01
    horizon: float = 30.0
    tol: float = 1e-10
    max_iter: int = 100


@dataclass
class ActionProblem:
    t_lo: float
    h: float
    n: int
    omega: float
    fixed_u: np.ndarray  # bool masks
    fixed_v: np.ndarray
    weights: np.ndarray
    v_end_force: float = 0.0  # linear term -c*v_{n-1}


def _action(params, pb: ActionProblem, u, v) -> float:
    h, w = pb.h, pb.omega
    t = pb.t_lo + h * np.arange(pb.n)
    du = np.diff(u)
    dv = np.diff(v) - w * h
    kin = (du @ du + dv @ dv) / (2.0 * h)
    pot = h * (pb.weights @ potential(params, u, v, t))
    return float(kin + pot - pb.v_end_force * v[-1])


def _gradient(params, pb: ActionProblem, u, v):
    h, w = pb.h, pb.omega
    t = pb.t_lo + h * np.arange(pb.n)
    vu, vv = grad_potential(params, u, v, t)
    gu = h * pb.weights * vu
    gv = h * pb.weights * vv
    du = np.diff(u) / h
    dv = (np.diff(v) - w * h) / h
    gu[:-1] -= du
    gu[1:] += du
    gv[:-1] -= dv
    gv[1:] += dv
    gv[-1] -= pb.v_end_force
    gu[pb.fixed_u] = 0.0
    gv[pb.fixed_v] = 0.0
    return gu, gv


def _hessian_bands(params, pb: ActionProblem, u, v) -> np.ndarray:
    """Upper band storage (3 x 2n) for solveh_banded, interleaved unknowns."""
    h, n = pb.h, pb.n
    t = pb.t_lo + h * np.arange(n)
    huu, huv, hvv = hess_potential(params, u, v, t)
    hw = h * pb.weights
    deg = np.full(n, 2.0)
    deg[0] = deg[-1] = 1.0
    duu = deg / h + hw * huu
    dvv = deg / h + hw * hvv
    offd = np.full(n - 1, -1.0 / h)
    cuv = hw * huv
    m = 2 * n
    ab = np.zeros((3, m))
    # main diagonal
    ab[2, 0::2] = duu
    ab[2, 1::2] = dvv
    # first superdiagonal: (u_i, v_i) couplings, (v_i, u_{i+1}) is zero
    sup1 = np.zeros(m)
    sup1[1::2] = cuv
    ab[1, 1:] = sup1[1:]
    # second superdiagonal: (u_i,u_{i+1}), (v_i,v_{i+1})
    sup2 = np.zeros(m)
    sup2[2::2] = offd
    sup2[3::2] = offd
    ab[0, 2:] = sup2[2:]
    fixed = np.zeros(m, dtype=bool)
    fixed[0::2] = pb.fixed_u
    fixed[1::2] = pb.fixed_v
    # pinned unknowns: identity rows and columns
    idx = np.nonzero(fixed)[0]
    ab[2, idx] = 1.0
    for k in (1, 2):
        ab[2 - k, idx] = 0.0  # entry (idx-k, idx)
        j = idx + k
        j = j[j < m]
        ab[2 - k, j] = 0.0  # entry (idx, idx+k)
    return ab


def _upper_to_general(ab: np.ndarray) -> np.ndarray:
    m = ab.shape[1]
    g = np.zeros((5, m))
    g[0:3] = ab
    for k in (1, 2):
        g[2 + k, : m - k] = ab[2 - k, k:]
    return g


@dataclass
class SolveInfo:
    iterations: int
    grad_norm: float
    converged: bool
    action: float


def minimize_action(params, pb: ActionProblem, u0, v0, tol: float, max_iter: int):
    """Damped Newton with backtracking on the discrete action."""
    u, v = np.array(u0, dtype=float), np.array(v0, dtype=float)
    # round-off floor of the residual: differences of O(2pi) values over h^2
    tol = max(tol, 256.0 * np.finfo(float).eps * TWO_PI / pb.h**2)
    a = _action(params, pb, u, v)
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        gu, gv = _gradient(params, pb, u, v)
        gnorm = float(max(np.abs(gu).max(), np.abs(gv).max()) / pb.h)
        if gnorm <= tol:
            return u, v, SolveInfo(it - 1, gnorm, True, a)
        g = np.empty(2 * pb.n)
        g[0::2], g[1::2] = gu, gv
        ab = _hessian_bands(params, pb, u, v)
        try:
            step = solveh_banded(ab, -g, lower=False)
            if g @ step >= 0:
                raise LinAlgError("not a descent direction")
        except (LinAlgError, ValueError):
            shift = 1.0 / pb.h
            gen = _upper_to_general(ab)
            gen[2] += shift
            step = solve_banded((2, 2), gen, -g)
        su, sv = step[0::2], step[1::2]
        lam = 1.0
        if -(g @ step) < 1e-11 * max(1.0, abs(a)):
            # predicted decrease below round-off of the action: plain Newton
            u, v = u + su, v + sv
            a = _action(params, pb, u, v)
            continue
        while True:
            un, vn = u + lam * su, v + lam * sv
            an = _action(params, pb, un, vn)
            if an <= a + 1e-4 * lam * (g @ step) or lam < 1e-10:
                break
            lam *= 0.5
        if an > a and lam < 1e-10:
            # at round-off level already: accept the Newton step unless it blows up
            if abs(an - a) > 1e-12 * max(1.0, abs(a)):
                break
        u, v, a = un, vn, an
    gu, gv = _gradient(params, pb, u, v)
    gnorm = float(max(np.abs(gu).max(), np.abs(gv).max()) / pb.h)
    return u, v, SolveInfo(max_iter, gnorm, gnorm <= tol, a)


@dataclass
class MinimizerCurve:
    side: str
    omega: float
    anchor: tuple[float, float]
    trajectory: Trajectory
    action: float
    omega_tilde: float | None = None
    info: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "side": self.side,
            "omega": self.omega,
            "anchor": list(self.anchor),
            "action": self.action,
            "t_lo": self.trajectory.t_lo,
            "dt": self.trajectory.dt,
            "n": self.trajectory.n,
        }
        if self.omega_tilde is not None:
            d["omega_tilde"] = self.omega_tilde
        d.update({k: v for k, v in self.info.items() if np.isscalar(v)})
        return d


def _grid(params: SystemParams, t0: float, side: str, horizon_k: float | None, opts: SolverOptions):
    se = params.sqrt_eps
    h = opts.step / se
    k = opts.horizon / se if horizon_k is None else float(horizon_k)
    if k < 10.0 / se * (1 - 1e-12):
        raise InvalidInput(f"horizon {k} shorter than 10/sqrt(eps)")
    n = int(math.ceil(k / h)) + 1
    t_lo = t0 if side == "right" else t0 - (n - 1) * h
    return t_lo, h, n


def _decay_fit(t, dist, t0, se) -> float:
    """Exponential rate of dist(t) over |t - t0| in [4, 14]/sqrt(eps)."""
    s = np.abs(t - t0)
    sel = (s >= 4.0 / se) & (s <= 14.0 / se) & (dist > 0)
    if sel.sum() < 3:
        return float("nan")
    slope = np.polyfit(s[sel], np.log(dist[sel]), 1)[0]
    return float(-slope)


def one_sided_minimizer(
    params: SystemParams,
    omega: float,
    t0: float,
    v0: float,
    side: str,
    horizon_k: float | None = None,
    options: SolverOptions | None = None,
    initial: tuple[np.ndarray, np.ndarray] | None = None,
) -> MinimizerCurve:
    """Right: u(t0)=pi, v(t0)=v0, u(t0+k)=2pi, v free at t0+k.  Left is mirrored."""
    if side not in ("left", "right"):
        raise InvalidInput(f"side must be 'left' or 'right', got {side!r}")
    opts = options or SolverOptions()
    se = params.sqrt_eps
    t_lo, h, n = _grid(params, t0, side, horizon_k, opts)
    t = t_lo + h * np.arange(n)
    fixed_u = np.zeros(n, dtype=bool)
    fixed_v = np.zeros(n, dtype=bool)
    fixed_u[0] = fixed_u[-1] = True
    a = 0 if side == "right" else n - 1
    fixed_v[a] = True
    weights = np.ones(n)
    weights[0] = weights[-1] = 0.5
    pb = ActionProblem(t_lo, h, n, float(omega), fixed_u, fixed_v, weights)
    if initial is None:
        u = pendulum_kink(se, t - t0)[0]
        v = v0 + omega * (t - t0)
    else:
        u, v = (np.array(x, dtype=float) for x in initial)
    u[a] = np.pi
    v[a] = v0
    if side == "right":
        u[-1] = TWO_PI
    else:
        u[0] = 0.0
    u, v, info = minimize_action(params, pb, u, v, opts.tol, opts.max_iter)
    # the half-weight at the anchor belongs to this side only
    traj = Trajectory(
        t_lo, h, u, v,
        left=BoundaryCondition("clamped", 0, omega) if side == "left" else BoundaryCondition("free"),
        right=BoundaryCondition("clamped", 1, omega) if side == "right" else BoundaryCondition("free"),
    )
    asym = TWO_PI if side == "right" else 0.0
    drift = float(np.max(np.abs(v - v0 - omega * (t - t0))))
    curve = MinimizerCurve(
        side, float(omega), (float(t0), float(v0)), traj, info.action,
        info={
            "iterations": info.iterations,
            "grad_norm": info.grad_norm,
            "converged": info.converged,
            "interior": bool(np.all((u[1:-1] > 0.0) & (u[1:-1] < TWO_PI))),
            "decay_rate": _decay_fit(t, np.abs(u - asym), t0, se),
            "v_drift": drift,
        },
    )
    if not info.converged:
        raise OptimizationFailure(
            f"{side} minimizer at (t0={t0}, v0={v0}) stalled with |grad|={info.grad_norm:.3e}", best=curve
        )
    return curve


def decay_constant(curve: MinimizerCurve, epsilon: float) -> float:
    """Smallest c with |u - asymptote| <= c*exp(-sqrt(eps)|t-t0|/2) on the grid."""
    tr = curve.trajectory
    asym = TWO_PI if curve.side == "right" else 0.0
    s = np.abs(tr.t - curve.anchor[0])
    return float(np.max(np.abs(tr.u - asym) * np.exp(0.5 * np.sqrt(epsilon) * s)))


def sandwich_violation(params: SystemParams, curve: MinimizerCurve) -> float:
    """max(z_plus(t - t0) - u(t)) over the right half; <= 0 when the ordering holds."""
    if curve.side != "right":
        raise InvalidInput("the sandwich check applies to right minimizers")
    _, zp = build_supersub(params)
    tr = curve.trajectory
    s = tr.t - curve.anchor[0]
    return float(np.max(zp(s) - tr.u))


def peierls(params: SystemParams, omega: float, t0: float, v0: float, options: SolverOptions | None = None):
    """(S_minus, S_plus, S)."""
    sm = one_sided_minimizer(params, omega, t0, v0, "left", options=options).action
    sp = one_sided_minimizer(params, omega, t0, v0, "right", options=options).action
    return sm, sp, sm + sp


def sigma(
    params: SystemParams, omega: float, omega_tilde: float, t0: float, v0: float,
    options: SolverOptions | None = None, convention: str = "literal",
) -> float:
    """S^-_omega + S^+_omega_tilde + linear terms in (t0, v0).

    ``literal`` adds (omega_tilde - omega) v0 + (omega^2 - omega_tilde^2) t0 / 2.
    ``momentum`` flips both signs; its critical points are exactly the (t0, v0)
    where the two one-sided minimizers join with matching velocity, which is
    what the gluing needs.  Both agree when omega_tilde == omega.
    """
    sm = one_sided_minimizer(params, omega, t0, v0, "left", options=options).action
    sp = one_sided_minimizer(params, omega_tilde, t0, v0, "right", options=options).action
    return sm + sp + _sigma_linear(omega, omega_tilde, t0, v0, convention)


def _sigma_linear(omega, omega_tilde, t0, v0, convention):
    lin = (omega_tilde - omega) * v0 + 0.5 * (omega**2 - omega_tilde**2) * t0
    if convention == "literal":
        return lin
    if convention == "momentum":
        return -lin
    raise InvalidInput(f"unknown sigma convention {convention!r}")


def barrier_sampler(params, omega, omega_tilde=None, options=None, convention="literal"):
    """Vectorised sampler of S_omega (or Sigma) for the neighborhood machinery."""
    wt = omega if omega_tilde is None else omega_tilde

    def f(tt, vv):
        tt = np.atleast_1d(tt)
        vv = np.atleast_1d(vv)
        return np.array([sigma(params, omega, wt, a, b, options, convention) for a, b in zip(tt, vv)])

    return f


def barrier_field(
    params: SystemParams, omega: float, n_t: int, n_v: int, omega_tilde: float | None = None,
    options: SolverOptions | None = None,
) -> GridField:
    """S_omega (or Sigma_{omega, omega_tilde}) sampled on the torus grid."""
    if n_t < 8 or n_v < 8:
        raise InvalidInput("scan grids need at least 8 points per side")
    dt, dv = TWO_PI / n_t, TWO_PI / n_v
    samp = barrier_sampler(params, omega, omega_tilde, options)
    tt, vv = np.meshgrid(dt * np.arange(n_t), dv * np.arange(n_v), indexing="ij")
    vals = samp(tt.ravel(), vv.ravel()).reshape(n_t, n_v)
    q = "S" if omega_tilde is None else "Sigma"
    return GridField(vals, 0.0, 0.0, dt, dv, True, float(omega), omega_tilde, q, samp)


def _one_sided_slope(x: np.ndarray, h: float, at_start: bool) -> float:
    """Second-order one-sided derivative at the first (or last) node."""
    if at_start:
        return float((-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h))
    return float((3.0 * x[-1] - 4.0 * x[-2] + x[-3]) / (2.0 * h))


def glue(left: MinimizerCurve, right: MinimizerCurve) -> Trajectory:
    """Concatenate a left and a right minimizer sharing the anchor node."""
    a, b = left.trajectory, right.trajectory
    if abs(a.dt - b.dt) > 1e-12 * a.dt or abs(a.t_hi - b.t_lo) > 1e-9 * max(1.0, abs(b.t_lo)):
        raise InvalidInput("minimizers do not share the anchor node")
    return Trajectory(
        a.t_lo, a.dt, np.concatenate([a.u, b.u[1:]]), np.concatenate([a.v, b.v[1:]]),
        left=a.left, right=b.right,
    )


def c1_defect(left: MinimizerCurve, right: MinimizerCurve) -> float:
    """|q^-_t(t0) - q^+_t(t0)| (Euclidean over (u, v))."""
    a, b = left.trajectory, right.trajectory
    du = _one_sided_slope(a.u, a.dt, False) - _one_sided_slope(b.u, b.dt, True)
    dv = _one_sided_slope(a.v, a.dt, False) - _one_sided_slope(b.v, b.dt, True)
    return float(np.hypot(du, dv))


def _interior_residual(params: SystemParams, tr: Trajectory) -> float:
    from .model import el_residual

    r = el_residual(params, tr)
    return float(max(np.abs(r.u[1:-1]).max(), np.abs(r.v[1:-1]).max()))


def _search_nodes(neighborhood) -> tuple[np.ndarray, np.ndarray]:
    """(interior nodes, boundary ring) of the search region."""
    if isinstance(neighborhood, Neighborhood):
        return np.asarray(neighborhood.nodes, float), np.asarray(neighborhood.boundary, float)
    t_lo, t_hi, v_lo, v_hi, *rest = neighborhood
    n = int(rest[0]) if rest else 9
    tt, vv = np.meshgrid(np.linspace(t_lo, t_hi, n), np.linspace(v_lo, v_hi, n), indexing="ij")
    edge = np.zeros((n, n), dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    pts = np.column_stack([tt.ravel(), vv.ravel()])
    return pts[~edge.ravel()], pts[edge.ravel()]


def heteroclinic_minimizer(
    params: SystemParams,
    omega: float,
    omega_tilde: float,
    neighborhood,
    options: SolverOptions | None = None,
    delta0: float | None = None,
    refine: bool = True,
) -> MinimizerCurve:
    """Minimize Sigma over a search region, polish, glue and refine.

    ``neighborhood`` is a :class:`Neighborhood` or a box (t_lo, t_hi, v_lo, v_hi[, n]).
    The glued curve is then relaxed as one two-sided problem (both far ends
    pinned, no anchor); its EL residual is reported as ``el_residual``.
    """
    opts = options or SolverOptions()
    samp = barrier_sampler(params, omega, omega_tilde, opts, convention="momentum")
    inner, ring = _search_nodes(neighborhood)
    if len(inner) == 0:
        raise InvalidNeighborhood("search region has no interior nodes")
    s_in = samp(inner[:, 0], inner[:, 1])
    s_ring = samp(ring[:, 0], ring[:, 1])
    best = float(s_in.min())
    ties = np.nonzero(s_in <= best + 1e-12 * max(1.0, abs(best)))[0]
    key = [(inner[k, 0] % TWO_PI, inner[k, 1] % TWO_PI) for k in ties]
    k0 = int(ties[min(range(len(ties)), key=lambda j: key[j])])
    tie_tol = 1e-10 * max(1.0, abs(best))
    if s_ring.min() < best - tie_tol:
        raise InvalidNeighborhood(
            f"minimum of Sigma on the boundary (ring min {s_ring.min():.12g} <= interior min {best:.12g})"
        )
    spacing = float(np.min(np.ptp(ring, axis=0))) / max(4, int(np.sqrt(len(inner))))
    if params.mu > 0 or omega != omega_tilde:
        t0, v0, val = polish_minimum(samp, inner[k0, 0], inner[k0, 1], max(spacing, 1e-6))
    else:
        t0, v0, val = float(inner[k0, 0]), float(inner[k0, 1]), best
    margin = float(s_ring.min() - val)
    left = one_sided_minimizer(params, omega, t0, v0, "left", options=opts)
    right = one_sided_minimizer(params, omega_tilde, t0, v0, "right", options=opts)
    glued = glue(left, right)
    defect = c1_defect(left, right)
    res_glued = _interior_residual(params, glued)
    final = glued
    refined = False
    res_final = res_glued
    # for mu = 0 the two-sided problem is translation invariant and singular
    if refine and params.mu > 0:
        n = glued.n
        fixed_u = np.zeros(n, dtype=bool)
        fixed_u[0] = fixed_u[-1] = True
        w = np.ones(n)
        w[0] = w[-1] = 0.5
        pb = ActionProblem(glued.t_lo, glued.dt, n, float(omega), fixed_u, np.zeros(n, dtype=bool), w,
                           v_end_force=float(omega_tilde - omega))
        try:
            u, v, info = minimize_action(params, pb, glued.u, glued.v, opts.tol, opts.max_iter)
            cand = glued.replace(u=u, v=v)
            r = _interior_residual(params, cand)
            if info.converged and np.all((u[1:-1] > 0) & (u[1:-1] < TWO_PI)):
                final, res_final, refined = cand, r, True
        except (LinAlgError, ValueError, FloatingPointError):
            pass
    se = params.sqrt_eps
    t = final.t
    info = {
        "sigma": val,
        "c1_defect": defect,
        "el_residual_glued": res_glued,
        "el_residual": res_final,
        "refined": refined,
        "boundary_margin": margin,
        "v_drift_left": left.info["v_drift"],
        "v_drift_right": right.info["v_drift"],
    }
    sel_l = t <= t0
    sel_r = t >= t0
    info["decay_rate_left"] = _decay_fit(t[sel_l], np.abs(final.u[sel_l]), t0, se)
    info["decay_rate_right"] = _decay_fit(t[sel_r], np.abs(final.u[sel_r] - TWO_PI), t0, se)
    if delta0 is not None:
        info["margin_required"] = 2.0 * delta0
        info["margin_ok"] = bool(margin >= 2.0 * delta0 - 1e-12)
    return MinimizerCurve(
        "two_sided", float(omega), (t0, v0), final, val, omega_tilde=float(omega_tilde), info=info
    )


@dataclass
class S1Report:
    omega_range: tuple[float, float]
    omegas: list[float]
    Delta0: float
    R: float
    R_cap: float
    per_omega: list[GapAnalysis]
    upper_bound: float  # 9 sqrt(eps) mu
    passed: bool

    @property
    def within_upper_bound(self) -> bool:
        return self.Delta0 <= self.upper_bound

    def as_dict(self) -> dict:
        return {
            "omega_range": list(self.omega_range),
            "Delta0": self.Delta0,
            "R": self.R,
            "R_cap": self.R_cap,
            "Delta0_upper": self.upper_bound,
            "within_upper_bound": self.within_upper_bound,
            "pass": self.passed,
            "per_omega": [{"omega": w, **g.as_dict()} for w, g in zip(self.omegas, self.per_omega)],
        }


def check_S1(
    params: SystemParams,
    omega_lo: float,
    omega_hi: float,
    n_omega: int,
    n_t: int,
    n_v: int,
    options: SolverOptions | None = None,
    patch_n: int = 21,
) -> S1Report:
    if omega_lo > omega_hi:
        raise InvalidInput("omega_lo must not exceed omega_hi")
    n_omega = max(1, int(n_omega))
    omegas = [float(omega_lo)] if n_omega == 1 or omega_lo == omega_hi else [
        float(w) for w in np.linspace(omega_lo, omega_hi, n_omega)
    ]
    res = []
    for w in omegas:
        fld = barrier_field(params, w, n_t, n_v, options=options)
        res.append(analyse_field(fld, divisor=3.0, epsilon=params.epsilon, patch_n=patch_n))
    delta = min(r.delta for r in res)
    R = max(r.R for r in res)
    cap = diameter_cap(params.epsilon)
    ok = all(r.passed for r in res) and delta > 0 and R <= cap
    upper = 9.0 * params.sqrt_eps * params.mu
    return S1Report((float(omega_lo), float(omega_hi)), omegas, delta, R, cap, res, upper, bool(ok))


def lipschitz_probe(
    params: SystemParams, omega: float, t0: float, v0: float, d_omega: float = 1e-2, side: str = "right",
    options: SolverOptions | None = None,
) -> float:
    """|S^pm_{omega+d} - S^pm_omega| / (mu |d|), the measured Lipschitz constant."""
    a = one_sided_minimizer(params, omega, t0, v0, side, options=options).action
    b = one_sided_minimizer(params, omega + d_omega, t0, v0, side, options=options).action
    return float(abs(b - a) / (params.mu * abs(d_omega))) if params.mu > 0 else 0.0


@dataclass
class ErrorStudy:
    epsilon: float
    omega: float
    mu: list[float]
    pairs: list[tuple[tuple[float, float], tuple[float, float]]]
    errors: np.ndarray  # (len(mu), len(pairs))
    slopes: list[float]
    slope: float

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "omega": self.omega,
            "mu": list(self.mu),
            "pairs": [[list(a), list(b)] for a, b in self.pairs],
            "errors": self.errors.tolist(),
            "slopes": self.slopes,
            "slope": self.slope,
        }


def _peierls_extrapolated(params, omega, t0, v0, options: SolverOptions) -> float:
    """S from steps h and h/2, Richardson-extrapolated for the O(h^2) grid error."""
    coarse = peierls(params, omega, t0, v0, options)[2]
    fine_opts = SolverOptions(options.step / 2.0, options.horizon, options.tol, options.max_iter)
    fine = peierls(params, omega, t0, v0, fine_opts)[2]
    return (4.0 * fine - coarse) / 3.0


def melnikov_error_study(
    params_base: SystemParams,
    omega: float,
    mu_list,
    pairs=None,
    options: SolverOptions | None = None,
) -> ErrorStudy:
    """err(mu) = |Delta S - mu Delta M| over point pairs and its log-log slope.

    Default pair: grid argmin and argmax of M_omega on a 32 x 32 scan.  The
    reported ``slope`` is that of the first pair; every pair's slope is kept.
    """
    opts = options or SolverOptions()
    mus = [float(m) for m in mu_list]
    if pairs is None:
        fld = melnikov.scan_field(params_base, omega, 32, 32)
        i0 = np.unravel_index(np.argmin(fld.values), fld.values.shape)
        i1 = np.unravel_index(np.argmax(fld.values), fld.values.shape)
        pairs = [
            ((float(fld.t_grid[i0[0]]), float(fld.v_grid[i0[1]])), (float(fld.t_grid[i1[0]]), float(fld.v_grid[i1[1]])))
        ]
    errs = np.zeros((len(mus), len(pairs)))
    for a, mu in enumerate(mus):
        p = params_base.with_mu(mu)
        for b, (q0, q1) in enumerate(pairs):
            ds = _peierls_extrapolated(p, omega, *q1, opts) - _peierls_extrapolated(p, omega, *q0, opts)
            dm = melnikov.melnikov_primitive(p, omega, *q1) - melnikov.melnikov_primitive(p, omega, *q0)
            errs[a, b] = abs(ds - mu * dm)
    pos = np.array([m > 0 for m in mus])
    slopes = []
    for b in range(len(pairs)):
        if pos.sum() >= 2 and np.all(errs[pos, b] > 0):
            slopes.append(float(np.polyfit(np.log(np.array(mus)[pos]), np.log(errs[pos, b]), 1)[0]))
        else:
            slopes.append(float("nan"))
    return ErrorStudy(params_base.epsilon, float(omega), mus, [tuple(map(tuple, pr)) for pr in pairs], errs, slopes, slopes[0])


def sigma_neighborhood(
    params: SystemParams,
    omega: float,
    omega_tilde: float,
    options: SolverOptions | None = None,
    n_scan: int = 32,
    patch_n: int = 15,
    cap: float | None = None,
):
    """Bounded sublevel neighborhood of the global minimum of Sigma near the M minimum.

    The grid argmin of M_omega seeds a Nelder-Mead polish of Sigma (momentum
    convention); a patch of half-width 0.6*cap around the polished point is
    grown into a Neighborhood.  For mu = 0 Sigma is flat and a small box around
    the seed is returned instead.
    """
    fld = melnikov.scan_field(params, omega, n_scan, n_scan)
    i, j = np.unravel_index(np.argmin(fld.values), fld.values.shape)
    t0, v0 = float(fld.t_grid[i]), float(fld.v_grid[j])
    cap = diameter_cap(params.epsilon) if cap is None else float(cap)
    if params.mu == 0:
        w = 0.3 * cap
        return (t0 - w, t0 + w, v0 - w, v0 + w, 5)
    samp = barrier_sampler(params, omega, omega_tilde, options, convention="momentum")
    tc, vc, val = polish_minimum(samp, t0, v0, 0.5 * min(fld.dt, fld.dv))
    like = GridField(np.zeros((3, 3)), 0.0, 0.0, 1.0, 1.0, False, float(omega), float(omega_tilde), "Sigma", samp)
    pf = patch_field(samp, tc, vc, 0.6 * cap, patch_n, like)
    c = (pf.values.shape[0] - 1) // 2
    nbs = grow_neighborhoods(pf, max_diameter=cap, seeds=[(c, c)], reference_min=val)
    return nbs[0]
