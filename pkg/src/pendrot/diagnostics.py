"""Audits of relaxation runs: local action balance, tube bounds, crossing parity and Delta_1.

Boundary-term convention
------------------------
The truncated action around jump k carries a term c * v(T~_k) with
|c| = omega_{k+1} - omega_k.  With c = -(omega_{k+1} - omega_k) ("momentum")
the balance dE/ds = -D + F holds exactly; with c = +(omega_{k+1} - omega_k)
("literal") an extra 2 (omega_{k+1} - omega_k) v_s(T~_k) appears.  Both are
available; the ledger defaults to "momentum".
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh
from scipy.optimize import brentq, minimize

from .errors import DegenerateConfiguration, InfeasibleLevel, InvalidInput
from .gradientflow import rhs as flow_rhs
from .model import SystemParams, potential
from .neighborhoods import Neighborhood, signed_distance
from .shadowing import JumpPlan, ShadowSeed
from .trajectory import Trajectory

TWO_PI = 2.0 * np.pi


def _boundary_sign(convention: str) -> float:
    if convention == "momentum":
        return -1.0
    if convention == "literal":
        return 1.0
    raise InvalidInput(f"unknown convention {convention!r}")


def _deriv(x: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(x, dt, edge_order=2)


# ---------------------------------------------------------------- balance law
def _window_slice(q: Trajectory, a: float, b: float) -> slice:
    if a < q.t_lo - 1e-12 or b > q.t_hi + 1e-12:
        raise InvalidInput(f"window [{a}, {b}] outside the grid [{q.t_lo}, {q.t_hi}]")
    i0 = max(0, int(math.floor((a - q.t_lo) / q.dt)) - 3)
    i1 = min(q.n, int(math.ceil((b - q.t_lo) / q.dt)) + 4)
    return slice(i0, i1)


def truncated_action_dissipation_flux(
    params: SystemParams,
    plan: JumpPlan,
    q: Trajectory,
    rhs_q: Trajectory | None,
    k: int,
    convention: str = "momentum",
) -> tuple[float, float, float]:
    """(E~_k, D~_k, F~_k) on [T~_k - L, T~_k + L].

    Densities are sampled at grid nodes (centred derivatives) and integrated
    with a cubic spline so that off-grid window ends and the split at T~_k
    are handled to the order of the stencils.
    """
    if plan.T_tilde is None:
        raise InvalidInput("plan has no T_tilde; build q0 first")
    if not 0 <= k < plan.n_jumps:
        raise InvalidInput(f"jump index {k} out of range")
    rq = flow_rhs(params, q) if rhs_q is None else rhs_q
    T, L = float(plan.T_tilde[k]), plan.L
    a, b = T - L, T + L
    sl = _window_slice(q, a, b)
    t = q.t[sl]
    u, v = q.u[sl], q.v[sl]
    ut, vt = _deriv(q.u, q.dt)[sl], _deriv(q.v, q.dt)[sl]
    us, vs = rq.u[sl], rq.v[sl]
    wl, wr = float(plan.omegas[k]), float(plan.omegas[k + 1])
    pot = potential(params, u, v, t)
    kin = 0.5 * ut**2 + pot
    lag_l = kin + 0.5 * (vt - wl) ** 2
    lag_r = kin + 0.5 * (vt - wr) ** 2
    E = CubicSpline(t, lag_l).integrate(a, T) + CubicSpline(t, lag_r).integrate(T, b)
    E += _boundary_sign(convention) * (wr - wl) * float(CubicSpline(t, v)(T))
    D = float(CubicSpline(t, us**2 + vs**2).integrate(a, b))
    flux_r = CubicSpline(t, ut * us + (vt - wr) * vs)(b)
    flux_l = CubicSpline(t, ut * us + (vt - wl) * vs)(a)
    return float(E), D, float(flux_r - flux_l)


@dataclass
class BalanceLedger:
    """Per-jump samples of (E~_k, D~_k, F~_k) along s."""

    params: SystemParams
    plan: JumpPlan
    jumps: list[int]
    convention: str = "momentum"
    s: list[float] = field(default_factory=list)
    E: list[list[float]] = field(default_factory=list)
    D: list[list[float]] = field(default_factory=list)
    F: list[list[float]] = field(default_factory=list)

    def record(self, s: float, q: Trajectory, rhs_q: Trajectory | None = None) -> None:
        rq = flow_rhs(self.params, q) if rhs_q is None else rhs_q
        row = [truncated_action_dissipation_flux(self.params, self.plan, q, rq, k, self.convention) for k in self.jumps]
        self.s.append(float(s))
        self.E.append([r[0] for r in row])
        self.D.append([r[1] for r in row])
        self.F.append([r[2] for r in row])

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return np.array(self.s), np.array(self.E), np.array(self.D), np.array(self.F)

    def residual(self) -> np.ndarray:
        """r_k(s) = E(s) - E(0) + int_0^s (D - F) ds', trapezoid in s; shape (n_s, n_jumps)."""
        s, E, D, F = self.arrays()
        g = D - F
        cum = np.zeros_like(E)
        if len(s) > 1:
            cum[1:] = np.cumsum(0.5 * np.diff(s)[:, None] * (g[1:] + g[:-1]), axis=0)
        return E - E[0] + cum

    def rows(self) -> list[dict]:
        s, E, D, F = self.arrays()
        r = self.residual()
        out = []
        for i in range(len(s)):
            for j, k in enumerate(self.jumps):
                out.append({"k": k, "s": s[i], "E": E[i, j], "D": D[i, j], "F": F[i, j], "r": r[i, j]})
        return out


@dataclass
class BalanceAudit:
    max_abs: list[float]
    worst: float
    energy_monotone: list[bool]
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "max_abs_residual": self.max_abs,
            "worst": self.worst,
            "energy_nonincreasing_when_flux_small": self.energy_monotone,
            "n_samples": self.n_samples,
        }


def balance_audit(ledger: BalanceLedger, flux_ratio: float = 0.5) -> BalanceAudit:
    """max |r_k| per jump, and whether E~_k never rises across intervals where |F~_k| <= flux_ratio * D~_k.

    On such intervals dE/ds = -D + F < 0, so any rise is a sign violation.
    """
    if len(ledger.s) < 2:
        raise InvalidInput("balance audit needs at least two samples")
    r = ledger.residual()
    _, E, D, F = ledger.arrays()
    mono = []
    for j in range(len(ledger.jumps)):
        small = np.abs(F[:, j]) <= flux_ratio * D[:, j]
        both = small[1:] & small[:-1]
        rise = np.diff(E[:, j]) > 1e-12 * max(1.0, float(np.abs(E[:, j]).max()))
        mono.append(bool(not np.any(both & rise)))
    per = [float(np.max(np.abs(r[:, j]))) for j in range(r.shape[1])]
    return BalanceAudit(per, float(max(per)), mono, len(ledger.s))


def refinement_order(coarse: float, fine: float) -> float:
    """log2 of the error ratio under one halving."""
    if fine <= 0:
        return float("inf")
    return float(math.log2(coarse / fine))


# ---------------------------------------------------------------- tube bounds
def lambda_weight(epsilon: float, tau_dist) -> np.ndarray:
    """lambda(tau) = min(sqrt(eps)/4, 8 log d / d) with d = max(||tau||, e)."""
    d = np.maximum(np.asarray(tau_dist, dtype=float), math.e)
    return np.minimum(math.sqrt(epsilon) / 4.0, 8.0 * np.log(d) / d)


@dataclass
class TubeReport:
    s: float
    c7: float
    c8: float
    Au_dev: float
    Av_dev: float
    M: float
    c9: float
    c10: float
    c11: float
    ceilings: tuple[float, float]
    passed: bool

    @property
    def flags(self) -> dict:
        return {
            "main1": self.c7 <= self.ceilings[0],
            "main2": self.c8 <= self.ceilings[1],
            "Au": self.Au_dev <= 1.0 / 3.0,
            "Av": self.Av_dev <= self.M,
        }

    def as_dict(self) -> dict:
        return {
            "s": self.s,
            "c7": self.c7,
            "c8": self.c8,
            "Au_dev": self.Au_dev,
            "Au_margin": 1.0 / 3.0 - self.Au_dev,
            "Av_dev": self.Av_dev,
            "Av_margin": self.M - self.Av_dev,
            "c9": self.c9,
            "c10": self.c10,
            "c11": self.c11,
            "flags": self.flags,
            "pass": self.passed,
        }


def _weighted_constants(params, plan, q, ref: Trajectory, n_tau: int):
    eps = params.epsilon
    M, varpi = plan.M, plan.varpi
    dt = q.dt
    ut, vt = _deriv(q.u, dt), _deriv(q.v, dt)
    utt, vtt = _deriv(ut, dt), _deriv(vt, dt)
    uttt, vttt = _deriv(utt, dt), _deriv(vtt, dt)
    du = ut - _deriv(ref.u, dt)
    dv = vt - _deriv(ref.v, dt)
    t = q.t
    w = np.full(q.n, dt)
    w[0] = w[-1] = 0.5 * dt
    taus = np.linspace(q.t_lo, q.t_hi, max(2, n_tau))
    lam = lambda_weight(eps, plan.jump_distance(taus))
    c9 = c10 = c11 = 0.0
    for tau, lm in zip(taus, lam):
        ker = w * np.exp(-lm * np.abs(t - tau))
        n_du, n_dv = ker @ du**2, ker @ dv**2
        n_utt, n_vtt = ker @ utt**2, ker @ vtt**2
        n_uttt, n_vttt = ker @ uttt**2, ker @ vttt**2
        c9 = max(c9, n_du / lm, n_dv / ((M**2 + 1.0) * lm))
        d3 = (M**2 + varpi**2) * eps * lm
        c10 = max(c10, (eps * n_du + n_utt) / d3, (eps * n_dv + n_vtt) / d3)
        d4 = (M**4 + varpi**4) * eps * lm
        c11 = max(c11, (eps * n_du + n_utt + n_uttt) / d4, (eps * n_dv + n_vtt + n_vttt) / d4)
    return float(c9), float(c10), float(c11)


def tube_audit(
    params: SystemParams,
    plan: JumpPlan,
    q: Trajectory,
    q0: Trajectory | ShadowSeed,
    s: float = 0.0,
    ceilings: tuple[float, float] = (20.0, 4.0),
    n_tau: int = 64,
) -> TubeReport:
    """Smallest constants c7, c8 (and c9..c11) for which the tube bounds hold on the grid."""
    if plan.T_tilde is None:
        raise InvalidInput("plan has no T_tilde; build q0 first")
    ref = q0.trajectory if isinstance(q0, ShadowSeed) else q0
    if ref.n != q.n or abs(ref.t_lo - q.t_lo) > 1e-9 or abs(ref.dt - q.dt) > 1e-12:
        raise InvalidInput("q and q0 must share the grid")
    t = q.t
    k = plan.k_of_t(t)
    dist = plan.jump_distance(t)
    c7 = float(np.max(np.abs(q.u - TWO_PI * k) * np.exp(0.5 * params.sqrt_eps * dist)))
    c8 = float(np.max(np.abs(q.v - ref.v)) / plan.M)
    su, sv = CubicSpline(t, q.u), CubicSpline(t, q.v)
    kk = np.arange(plan.n_jumps)
    au = float(np.max(np.abs(su(plan.T_tilde) - (2 * kk + 1) * np.pi)))
    av = float(np.max(np.abs(sv(plan.T_tilde) - plan.V_tilde)))
    c9, c10, c11 = _weighted_constants(params, plan, q, ref, n_tau)
    rep = TubeReport(float(s), c7, c8, au, av, plan.M, c9, c10, c11, tuple(ceilings), False)
    rep.passed = bool(all(rep.flags.values()))
    return rep


@dataclass
class TubeLog:
    reports: list[TubeReport] = field(default_factory=list)

    def add(self, rep: TubeReport) -> None:
        self.reports.append(rep)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def worst(self) -> dict:
        return {
            "c7": max(r.c7 for r in self.reports),
            "c8": max(r.c8 for r in self.reports),
            "Au_dev": max(r.Au_dev for r in self.reports),
            "Av_dev": max(r.Av_dev for r in self.reports),
        }

    def trend_warnings(self, skip: int = 1, rel: float = 1e-6) -> list[str]:
        """Constants that grow after the first ``skip`` audits."""
        out = []
        rs = self.reports[skip:]
        for name in ("c7", "c8"):
            vals = [getattr(r, name) for r in rs]
            for a, b, r in zip(vals, vals[1:], rs[1:]):
                if b > a * (1 + rel) + 1e-14:
                    out.append(f"{name} increased to {b:.6g} at s={r.s:.6g}")
                    break
        for w in out:
            warnings.warn(w, RuntimeWarning, stacklevel=2)
        return out


# ---------------------------------------------------------------- parity
def neighborhood_polygon(nb) -> np.ndarray:
    """Ordered polygon of a Neighborhood, or of a box (t_lo, t_hi, v_lo, v_hi[, n])."""
    if isinstance(nb, Neighborhood):
        return np.asarray(nb.boundary, dtype=float)
    t_lo, t_hi, v_lo, v_hi = (float(x) for x in nb[:4])
    return np.array([[t_lo, v_lo], [t_hi, v_lo], [t_hi, v_hi], [t_lo, v_hi]])


def shifted_polygon(nb, plan: JumpPlan, k: int) -> np.ndarray:
    """N~_k: the heteroclinic's neighborhood moved by (T~_k - T_k, V~_k - V_k)."""
    poly = neighborhood_polygon(nb).copy()
    poly[:, 0] += plan.T_tilde[k] - plan.T[k]
    poly[:, 1] += plan.V_tilde[k] - plan.V[k]
    return poly


@dataclass
class ParityResult:
    n: int
    parity: str
    zeros_inside: list[float]
    zeros_outside: list[float]
    boundary_times: list[float]
    tol_used: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "parity": self.parity,
            "zeros_inside": self.zeros_inside,
            "zeros_outside": self.zeros_outside,
            "tol": self.tol_used,
        }


def _count_crossings(t, ut, v, poly, tol):
    """Return (n, zeros in U, zeros outside, boundary times, min |dist| at zeros)."""
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    span = float(np.max(hi - lo))
    near = (t >= lo[0] - span) & (t <= hi[0] + span) & (v >= lo[1] - span) & (v <= hi[1] + span)
    dist = np.full(t.size, np.inf)
    for i in np.nonzero(near)[0]:
        dist[i] = signed_distance(poly, t[i], v[i])
    inside = dist <= 0
    pts: list[tuple[float, float]] = [(t[0], ut[0])]
    for i in np.nonzero(inside[1:] != inside[:-1])[0]:
        d0, d1 = dist[i], dist[i + 1]
        d0 = 1.0 if not np.isfinite(d0) else d0
        d1 = 1.0 if not np.isfinite(d1) else d1
        a = d0 / (d0 - d1) if d0 != d1 else 0.5
        pts.append((t[i] + a * (t[i + 1] - t[i]), ut[i] + a * (ut[i + 1] - ut[i])))
    pts.append((t[-1], ut[-1]))
    # strict sign changes between nodes, plus nodes that are exact zeros (counted once)
    z_idx = np.nonzero(ut[1:] * ut[:-1] < 0)[0]
    z_idx = np.sort(np.concatenate([z_idx, np.nonzero(ut[:-1] == 0)[0]]))
    zeros = []
    for i in z_idx:
        a = ut[i] / (ut[i] - ut[i + 1]) if ut[i] != ut[i + 1] else 0.0
        tz = t[i] + a * (t[i + 1] - t[i])
        vz = v[i] + a * (v[i + 1] - v[i])
        zeros.append((tz, signed_distance(poly, tz, vz)))
    margin = min((abs(d) for _, d in zeros), default=np.inf)
    n = 0
    z_in, z_out = [], []
    for (ta, ua), (tb, ub) in zip(pts, pts[1:]):
        if np.sign(ua) == np.sign(ub):
            continue
        gap = [(tz, d) for tz, d in zeros if ta <= tz <= tb]
        if gap and all(d <= 0 for _, d in gap):
            n += 1
            z_in.extend(tz for tz, _ in gap)
        else:
            z_out.extend(tz for tz, _ in gap)
    return n, z_in, z_out, [p[0] for p in pts[1:-1]], margin


def parity_count(
    plan: JumpPlan,
    q: Trajectory,
    k: int,
    neighborhood,
    tol: float = 1e-9,
    max_halvings: int = 3,
) -> ParityResult:
    """Crossings of u = (2k+1)pi inside N~_k on [T~_{k-1}, T~_{k+1}], counted per sign-changing gap.

    Grid ends replace T~_{k-1} / T~_{k+1} at the first and last jump.  A zero
    within ``tol`` of the boundary of N~_k triggers a re-audit with the
    tolerance halved, up to ``max_halvings`` times, then raises.
    """
    if plan.T_tilde is None:
        raise InvalidInput("plan has no T_tilde; build q0 first")
    poly = shifted_polygon(neighborhood, plan, k)
    t0 = plan.T_tilde[k - 1] if k >= 1 else q.t_lo
    t1 = plan.T_tilde[k + 1] if k + 1 < plan.n_jumps else q.t_hi
    if t0 < q.t_lo - 1e-9 or t1 > q.t_hi + 1e-9:
        raise InvalidInput("grid does not cover the parity window")
    sel = (q.t >= t0 - 1e-12) & (q.t <= t1 + 1e-12)
    t, v = q.t[sel], q.v[sel]
    ut = q.u[sel] - (2 * k + 1) * np.pi
    n, zi, zo, bt, margin = _count_crossings(t, ut, v, poly, tol)
    tl = tol
    for _ in range(max_halvings + 1):
        if margin > tl:
            return ParityResult(n, "odd" if n % 2 else "even", zi, zo, bt, tl)
        tl *= 0.5
    raise DegenerateConfiguration(
        f"zero of u-(2k+1)pi within {margin:.3e} of the neighborhood boundary at jump {k}"
    )


def parity_curve(t, u_shifted, v, polygon, tol: float = 1e-9) -> tuple[int, str]:
    """Parity count for a raw curve with u already shifted by (2k+1)pi."""
    n, *_ = _count_crossings(np.asarray(t, float), np.asarray(u_shifted, float), np.asarray(v, float),
                             np.asarray(polygon, float), tol)
    return n, "odd" if n % 2 else "even"


# ---------------------------------------------------------------- Delta_1
@dataclass
class Delta1Estimate:
    e: float
    value: float
    family_dim: int
    E0: float
    constraint_defect: float
    coefficients: np.ndarray
    envelope_ok: bool
    trace: list[dict] = field(default_factory=list)
    is_upper_bound: bool = True

    def as_dict(self) -> dict:
        return {
            "e": self.e,
            "delta1_upper": self.value,
            "family_dim": self.family_dim,
            "E0": self.E0,
            "constraint_defect": self.constraint_defect,
            "envelope_ok": self.envelope_ok,
            "n_iterations": len(self.trace),
            "is_upper_bound": self.is_upper_bound,
        }


def hermite_basis(t: np.ndarray, centre: float, scale: float, n: int) -> np.ndarray:
    """First n Hermite functions in x = scale*(t - centre), normalized recursively; shape (n, len(t))."""
    x = scale * (np.asarray(t, dtype=float) - centre)
    out = np.zeros((max(n, 1), x.size))
    g = np.exp(-0.5 * x * x) / np.pi**0.25
    out[0] = g
    if n > 1:
        out[1] = math.sqrt(2.0) * x * g
    for m in range(2, n):
        out[m] = math.sqrt(2.0 / m) * x * out[m - 1] - math.sqrt((m - 1) / m) * out[m - 2]
    return out[:n]


class _LevelProblem:
    """E_q(h), D_q(h) for perturbations h = sum_j c_j phi_j of a two-sided heteroclinic."""

    def __init__(self, params: SystemParams, curve, family_dim: int, convention: str, c12: float, M: float):
        tr = curve.trajectory
        self.params = params
        self.q = tr
        self.wl = float(curve.omega)
        self.wr = float(curve.omega_tilde)
        self.a = tr.index_of(curve.anchor[0], tol=1e-6)
        self.sign = _boundary_sign(convention)
        se = params.sqrt_eps
        nu = (family_dim + 1) // 2
        nv = family_dim // 2
        hb = hermite_basis(tr.t, curve.anchor[0], se, max(nu, nv))
        # basis order: u0, v0, u1, v1, ... so that smaller families are nested
        self.basis = []
        for j in range(family_dim):
            comp, m = j % 2, j // 2
            self.basis.append((comp, hb[m]))
        self.c12 = c12
        self.M = M
        self.envelope = c12 * np.exp(-0.5 * se * np.abs(tr.t - curve.anchor[0]) + TWO_PI)
        self.t_rel = tr.t - curve.anchor[0]

    def perturbed(self, c) -> Trajectory:
        hu = np.zeros(self.q.n)
        hv = np.zeros(self.q.n)
        for cj, (comp, phi) in zip(c, self.basis):
            if comp == 0:
                hu += cj * phi
            else:
                hv += cj * phi
        return self.q.replace(u=self.q.u + hu, v=self.q.v + hv), hu, hv

    def action(self, q: Trajectory) -> float:
        dt = q.dt
        du = np.diff(q.u)
        dv = np.diff(q.v)
        a = self.a
        om = np.where(np.arange(q.n - 1) < a, self.wl, self.wr)
        kin = np.sum(du * du + (dv - om * dt) ** 2) / (2.0 * dt)
        w = np.full(q.n, dt)
        w[0] = w[-1] = 0.5 * dt
        pot = float(np.dot(w, potential(self.params, q.u, q.v, q.t)))
        return float(kin + pot + self.sign * (self.wr - self.wl) * q.v[a])

    def dissipation(self, q: Trajectory) -> float:
        r = flow_rhs(self.params, q)
        w = np.full(q.n, q.dt)
        w[0] = w[-1] = 0.5 * q.dt
        return float(np.dot(w, r.u**2 + r.v**2))

    def envelope_ok(self, hu, hv) -> bool:
        return bool(np.all(np.abs(hu) <= self.envelope) and abs(hv[self.a]) <= 4.0 * self.M)


def _feasible_scale(g, c: np.ndarray, e: float, max_doublings: int = 60) -> float | None:
    """alpha > 0 with g(alpha c) = 0, where g(0) = -e < 0; None if g never turns positive."""
    hi = 1.0
    for _ in range(max_doublings):
        if g(hi * c) > 0:
            break
        hi *= 2.0
    else:
        return None
    lo = 0.0 if hi == 1.0 else hi / 2.0
    return float(brentq(lambda a: g(a * c), lo, hi, xtol=1e-15, rtol=1e-14))


def estimate_delta1(
    params: SystemParams,
    curve,
    e: float,
    family_dim: int = 8,
    budget: int = 200,
    convention: str = "momentum",
    initial: np.ndarray | None = None,
    c12: float = 1.0,
    M: float | None = None,
    defect_tol: float = 1e-6,
) -> Delta1Estimate:
    """Upper estimate of Delta_1(q, e) = inf D_q(h) over E_q(h) = E_q(0) + e, h in a Hermite family.

    A quadratic model of E and D in the coefficients gives a generalized
    eigenvector seed; the seed is scaled onto the level set, then improved by
    quadratic-penalty BFGS (at most ``budget`` iterations) and scaled back onto
    the level.  The class envelope on u^h and the bound on v^h(anchor) are a
    hard constraint: candidates violating them are rejected.
    """
    if family_dim < 4:
        raise InvalidInput("family_dim must be at least 4")
    if e < 0:
        raise InvalidInput("level e must be nonnegative")
    lp = _LevelProblem(params, curve, family_dim, convention, c12, TWO_PI if M is None else M)
    E0 = lp.action(lp.q)
    n = family_dim

    def g(cc):
        return lp.action(lp.perturbed(cc)[0]) - E0 - e

    def dis(cc):
        return lp.dissipation(lp.perturbed(cc)[0])

    trace: list[dict] = []
    if e == 0:
        c0 = np.zeros(n)
        return Delta1Estimate(0.0, dis(c0), n, E0, abs(g(c0)), c0, True, trace)

    # quadratic model: action Hessian A (central differences), dissipation Gram matrix B
    h = 1e-3
    I = np.eye(n)
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            pp = g(h * (I[i] + I[j]))
            pm = g(h * (I[i] - I[j]))
            mp = g(h * (-I[i] + I[j]))
            mm = g(-h * (I[i] + I[j]))
            A[i, j] = A[j, i] = (pp - pm - mp + mm) / (4 * h * h)
    w = np.full(lp.q.n, lp.q.dt)
    w[0] = w[-1] = 0.5 * lp.q.dt
    cols = []
    for j in range(n):
        rp = flow_rhs(params, lp.perturbed(h * I[j])[0])
        rm = flow_rhs(params, lp.perturbed(-h * I[j])[0])
        cols.append(np.concatenate([(rp.u - rm.u), (rp.v - rm.v)]) / (2 * h))
    G = np.array(cols).T
    W = np.concatenate([w, w])
    B = G.T @ (W[:, None] * G)
    av, avec = np.linalg.eigh(A)
    pos = av > 1e-10 * max(1.0, float(np.abs(av).max()))
    if not np.any(pos):
        raise InfeasibleLevel("the action has no increasing direction in this family")
    P = avec[:, pos]
    lam, x = eigh(P.T @ B @ P, P.T @ A @ P)
    candidates = []
    for m in range(lam.size):
        d = P @ x[:, m]
        alpha = _feasible_scale(g, d, e)
        if alpha is None:
            continue
        c = alpha * d
        _, hu, hv = lp.perturbed(c)
        if lp.envelope_ok(hu, hv):
            candidates.append((dis(c), c))
        if len(candidates) >= 3:
            break
    if initial is not None:
        c_init = np.zeros(n)
        c_init[: min(n, len(initial))] = np.asarray(initial, float)[:n]
        if abs(g(c_init)) <= defect_tol:
            candidates.append((dis(c_init), c_init))
    if not candidates:
        raise InfeasibleLevel(f"level E0+{e:.3e} not reached within the {n}-dimensional family")
    d_best, c_best = min(candidates, key=lambda x: x[0])
    trace.append({"stage": "seed", "dissipation": d_best, "defect": g(c_best), "iterations": 0})

    # penalty polish, then radial projection back onto the level
    rho = 10.0 * max(d_best, 1e-30) / (e * e)
    res = minimize(
        lambda cc: dis(cc) + rho * g(cc) ** 2, c_best, method="BFGS",
        options={"maxiter": int(budget), "gtol": 1e-12 * max(d_best, 1e-30)},
    )
    alpha = _feasible_scale(g, res.x, e) if np.any(res.x) else None
    if alpha is not None:
        c_new = alpha * res.x
        _, hu, hv = lp.perturbed(c_new)
        d_new = dis(c_new)
        trace.append({"stage": "penalty", "dissipation": d_new, "defect": g(c_new), "iterations": int(res.nit)})
        if lp.envelope_ok(hu, hv) and d_new < d_best and abs(g(c_new)) <= defect_tol:
            d_best, c_best = d_new, c_new
    defect = abs(g(c_best))
    if defect > defect_tol:
        raise InfeasibleLevel(f"level defect {defect:.3e} above {defect_tol:.1e}")
    _, hu, hv = lp.perturbed(c_best)
    return Delta1Estimate(float(e), float(d_best), n, float(E0), float(defect), c_best, lp.envelope_ok(hu, hv), trace)


def delta1_sweep(params: SystemParams, curve, e: float, dims, **kw) -> list[Delta1Estimate]:
    """Estimates over increasing family sizes, each warm-started from the previous one.

    The previous optimum is feasible in the larger family, so the reported
    values are nonincreasing.
    """
    out: list[Delta1Estimate] = []
    prev = None
    for d in sorted(int(x) for x in dims):
        init = None if prev is None else prev.coefficients
        est = estimate_delta1(params, curve, e, d, initial=init, **kw)
        if prev is not None and est.value > prev.value:
            c = np.zeros(d)
            c[: prev.coefficients.size] = prev.coefficients
            est = Delta1Estimate(e, prev.value, d, est.E0, prev.constraint_defect, c, prev.envelope_ok,
                                 est.trace)
        out.append(est)
        prev = est
    return out


def flux_slope(L_values, flux_values) -> float:
    """log-log slope of |F~| against L."""
    x = np.log(np.asarray(L_values, dtype=float))
    y = np.log(np.abs(np.asarray(flux_values, dtype=float)))
    return float(np.polyfit(x, y, 1)[0])
