"""Jump plans and the approximate shadowing orbit q0 built from translated heteroclinics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import expit

from .errors import InvalidInput
from .model import SystemParams
from .trajectory import BoundaryCondition, Trajectory

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------- smoothstep
def _check_interval(a: float, b: float) -> None:
    if not a < b:
        raise InvalidInput(f"smoothstep needs a < b, got a={a}, b={b}")


def _blend_arg(a: float, b: float, t):
    s = (np.asarray(t, dtype=float) - a) / (b - a)
    inner = (s > 0.0) & (s < 1.0)
    sc = np.where(inner, s, 0.5)
    g = np.where(inner, 1.0 / sc - 1.0 / (1.0 - sc), 0.0)
    return s, inner, sc, g


def smoothstep(a: float, b: float, t):
    """(phi_minus, phi_plus) with phi_minus = 1 for t <= a, 0 for t >= b.

    In between phi_minus = exp(-(b-a)/(b-t)) / (exp(-(b-a)/(t-a)) + exp(-(b-a)/(b-t))),
    written as a logistic of 1/s - 1/(1-s) with s = (t-a)/(b-a).
    """
    _check_interval(a, b)
    s, inner, _, g = _blend_arg(a, b, t)
    pm = np.where(s <= 0.0, 1.0, np.where(s >= 1.0, 0.0, expit(g)))
    pm = np.where(inner, pm, np.where(s <= 0.0, 1.0, 0.0))
    if np.ndim(t) == 0:
        pm = float(pm)
    return pm, 1.0 - pm


def smoothstep_derivative(a: float, b: float, t):
    """d phi_minus / dt (phi_plus has the opposite sign)."""
    _check_interval(a, b)
    _, inner, sc, g = _blend_arg(a, b, t)
    p = expit(g)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        dg = -1.0 / sc**2 - 1.0 / (1.0 - sc) ** 2
        d = p * (1.0 - p) * dg / (b - a)
    # next to the ends p(1-p) underflows before dg overflows; the limit is 0
    d = np.where(inner & np.isfinite(d), d, 0.0)
    return float(d) if np.ndim(t) == 0 else d


def smoothstep_derivative_constant(n: int = 20001) -> float:
    """max |phi'| * (b - a), measured on a fine grid of the unit interval."""
    t = np.linspace(0.0, 1.0, n)
    return float(np.max(np.abs(smoothstep_derivative(0.0, 1.0, t))))


# ---------------------------------------------------------------- plans
def constant_M(params: SystemParams, plan_partial, R: float) -> float:
    """M = 2pi + 2(varpi+1)(R+mu) + 6 sqrt(R) eps^(1/4).

    ``plan_partial`` is a JumpPlan, a sequence of speeds, or varpi itself.
    """
    if R < 0:
        raise InvalidInput("R must be nonnegative")
    if isinstance(plan_partial, JumpPlan):
        varpi = plan_partial.varpi
    elif np.ndim(plan_partial) == 0:
        varpi = float(plan_partial)
    else:
        varpi = max(1.0, float(np.max(np.abs(plan_partial))))
    return float(
        TWO_PI + 2.0 * (varpi + 1.0) * (R + params.mu) + 6.0 * math.sqrt(R) * params.epsilon**0.25
    )


@dataclass
class JumpPlan:
    """Speeds omega_0..omega_K and nominal times Ltilde_0..Ltilde_{K-1} of the K jumps.

    Jump k connects omega_k (left) to omega_{k+1} (right) and lifts u from 2k*pi
    to 2(k+1)*pi.  ``T_tilde``/``V_tilde`` (and the anchors ``T``/``V`` of the
    heteroclinics) are filled in by :func:`build_q0`.
    """

    omegas: np.ndarray
    L: float
    Ltilde: np.ndarray
    epsilon: float
    mu: float
    R: float = 0.0
    Delta0: float = 0.0
    M: float = float("nan")
    T: np.ndarray | None = None
    V: np.ndarray | None = None
    T_tilde: np.ndarray | None = None
    V_tilde: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.omegas = np.asarray(self.omegas, dtype=float).ravel()
        self.Ltilde = np.asarray(self.Ltilde, dtype=float).ravel()
        if self.Ltilde.size < 1:
            raise InvalidInput("a plan needs at least one jump")
        if self.omegas.size != self.Ltilde.size + 1:
            raise InvalidInput(
                f"need len(omegas) == len(Ltilde) + 1, got {self.omegas.size} and {self.Ltilde.size}"
            )
        if not self.L > 0:
            raise InvalidInput("L must be positive")
        if np.isnan(self.M):
            self.M = constant_M(SystemParams(self.epsilon, self.mu), self.varpi, self.R)

    @classmethod
    def create(cls, params: SystemParams, omegas, L: float, Ltilde, s1=None, **kw) -> "JumpPlan":
        R = kw.pop("R", s1.R if s1 is not None else 0.0)
        D0 = kw.pop("Delta0", s1.Delta0 if s1 is not None else 0.0)
        return cls(omegas, float(L), Ltilde, params.epsilon, params.mu, float(R), float(D0), **kw)

    @property
    def n_jumps(self) -> int:
        return int(self.Ltilde.size)

    @property
    def varpi(self) -> float:
        return max(1.0, float(np.max(np.abs(self.omegas))))

    @property
    def gaps(self) -> np.ndarray:
        """L_k = T_tilde_{k+1} - T_tilde_k (requires build_q0)."""
        if self.T_tilde is None:
            raise InvalidInput("T_tilde not yet assigned; run build_q0 first")
        return np.diff(self.T_tilde)

    def omega_tilde(self) -> np.ndarray:
        """Average slopes (V~_k - V~_{k-1}) / (T~_k - T~_{k-1}) for k = 1..K-1."""
        if self.T_tilde is None:
            raise InvalidInput("T_tilde not yet assigned; run build_q0 first")
        return np.diff(self.V_tilde) / np.diff(self.T_tilde)

    def k_of_t(self, t):
        """Torus index k(t): t in (T~_{k-1}, T~_k] gives k; ties go to the lower k."""
        times = self.T_tilde if self.T_tilde is not None else self.Ltilde
        return np.searchsorted(times, np.asarray(t, dtype=float), side="left")

    def jump_distance(self, t):
        """||t|| = distance to the nearest jump time."""
        times = self.T_tilde if self.T_tilde is not None else self.Ltilde
        t = np.asarray(t, dtype=float)
        return np.min(np.abs(t[..., None] - times), axis=-1)

    def as_dict(self) -> dict:
        d = {
            "omegas": self.omegas.tolist(),
            "L": self.L,
            "Ltilde": self.Ltilde.tolist(),
            "epsilon": self.epsilon,
            "mu": self.mu,
            "R": self.R,
            "Delta0": self.Delta0,
            "M": self.M,
            "varpi": self.varpi,
        }
        for name in ("T", "V", "T_tilde", "V_tilde"):
            val = getattr(self, name)
            if val is not None:
                d[name] = np.asarray(val).tolist()
        return d


@dataclass
class PlanPolicy:
    """Enforcement knobs: c4 = max(1, lipschitz * safety); c14 scales the advisory L bound."""

    lipschitz: float = 1.0
    safety: float = 4.0
    c14: float = 1.0
    strict: bool = True

    @property
    def c4(self) -> float:
        return max(1.0, self.lipschitz * self.safety)


def step_bound(plan: JumpPlan, policy: PlanPolicy | None = None) -> float:
    """Largest admissible |omega_{k+1} - omega_k|: Delta0 / (4 c4 (R v mu) varpi)."""
    policy = policy or PlanPolicy()
    scale = max(plan.R, plan.mu)
    if scale <= 0:
        return float("inf")
    return float(plan.Delta0 / (4.0 * policy.c4 * scale * plan.varpi))


@dataclass
class PlanReport:
    hard_failures: list[str]
    warnings: list[str]
    step_bound: float
    max_step: float
    L_advisory: float | None

    @property
    def passed(self) -> bool:
        return not self.hard_failures

    def as_dict(self) -> dict:
        return {
            "pass": self.passed,
            "hard_failures": list(self.hard_failures),
            "warnings": list(self.warnings),
            "step_bound": self.step_bound,
            "max_step": self.max_step,
            "L_advisory": self.L_advisory,
        }


def _is_multiple_2pi(x: float) -> bool:
    q = x / TWO_PI
    return abs(q - round(q)) <= 1e-9 * max(1.0, abs(q))


def validate_plan(
    plan: JumpPlan, s1=None, policy: PlanPolicy | None = None, delta1: float | None = None
) -> PlanReport:
    """Hard rules (spacing, mod 2pi, M, S1) abort when ``policy.strict``; step and L checks warn."""
    policy = policy or PlanPolicy()
    hard: list[str] = []
    warn: list[str] = []
    if s1 is not None and not s1.passed:
        hard.append("S1: the supplied S1 report did not pass")
    for k, lt in enumerate(plan.Ltilde):
        if not _is_multiple_2pi(float(lt)):
            hard.append(f"Ltilde[{k}]={lt!r} is not a multiple of 2pi")
    need = 4.0 * plan.L + TWO_PI
    for k, d in enumerate(np.diff(plan.Ltilde)):
        if d < need * (1.0 - 1e-12):
            hard.append(f"spacing Ltilde[{k + 1}]-Ltilde[{k}]={d:.12g} < 4L+2pi={need:.12g}")
    M_req = constant_M(SystemParams(plan.epsilon, plan.mu), plan.varpi, plan.R)
    if plan.M < M_req * (1.0 - 1e-12):
        hard.append(f"M={plan.M:.12g} below required {M_req:.12g}")
    if plan.T_tilde is not None:
        for k in range(plan.n_jumps):
            off = plan.T_tilde[k] - plan.Ltilde[k]
            if not (-np.pi < off <= np.pi):
                hard.append(f"T_tilde[{k}]-Ltilde[{k}]={off:.12g} outside (-pi, pi]")
            if plan.T is not None and not _is_multiple_2pi(plan.T_tilde[k] - plan.T[k]):
                hard.append(f"T_tilde[{k}] not congruent to T[{k}] mod 2pi")

    bound = step_bound(plan, policy)
    steps = np.abs(np.diff(plan.omegas))
    max_step = float(steps.max()) if steps.size else 0.0
    for k, st in enumerate(steps):
        if st > bound:
            warn.append(f"omega step {k}: |dw|={st:.3e} exceeds policy bound {bound:.3e}")
    if s1 is not None:
        lo, hi = s1.omega_range
        if plan.omegas.min() < lo - 1e-12 or plan.omegas.max() > hi + 1e-12:
            warn.append(f"speeds leave the S1 range [{lo}, {hi}]")
    L_adv = None
    if delta1 is not None and delta1 > 0:
        L_adv = float(policy.c14 * plan.varpi**5 * abs(math.log(delta1)) / delta1)
        if plan.L < L_adv:
            warn.append(f"L={plan.L:.6g} below advisory bound {L_adv:.6g} (c14={policy.c14})")
    report = PlanReport(hard, warn, bound, max_step, L_adv)
    if hard and policy.strict:
        err = InvalidInput("invalid jump plan: " + "; ".join(hard))
        err.report = report
        raise err
    for w in warn:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    return report


def _spacing(L: float) -> float:
    """Smallest multiple of 2pi that is >= 4L + 2pi."""
    return TWO_PI * math.ceil((4.0 * L + TWO_PI) / TWO_PI - 1e-12)


def uniform_plan(params: SystemParams, omegas, L: float, first: float = 0.0, s1=None) -> JumpPlan:
    """Jumps at first, first + d, ... with d the minimal admissible spacing."""
    omegas = np.asarray(omegas, dtype=float)
    K = omegas.size - 1
    first = TWO_PI * round(first / TWO_PI)
    return JumpPlan.create(params, omegas, L, first + _spacing(L) * np.arange(K), s1=s1)


def ramp_plan(
    params: SystemParams,
    omega_lo: float,
    omega_hi: float,
    L: float,
    bound: float,
    s1=None,
    first: float = 0.0,
) -> JumpPlan:
    """omega_lo, omega_lo + bound, ..., omega_hi: equal steps except possibly the last."""
    if not bound > 0:
        raise InvalidInput("step bound must be positive")
    if omega_hi < omega_lo:
        raise InvalidInput("omega_hi must not be below omega_lo")
    n = int(math.ceil((omega_hi - omega_lo) / bound - 1e-12))
    omegas = [omega_lo + bound * j for j in range(n)] + [omega_hi]
    if len(omegas) < 2:
        omegas = [omega_lo, omega_hi]
    return uniform_plan(params, omegas, L, first, s1)


@dataclass
class BernoulliPlan:
    bits: tuple[int, ...]
    omega: float
    L: float
    offset: int
    jump_positions: tuple[int, ...]
    entropy_rate: float

    def as_dict(self) -> dict:
        return {
            "bits": list(self.bits),
            "omega": self.omega,
            "L": self.L,
            "offset": self.offset,
            "jump_positions": list(self.jump_positions),
            "entropy_rate": self.entropy_rate,
        }


def bernoulli_plan(
    params: SystemParams, bits: Sequence[int], omega: float, L: float, offset: int = 0, s1=None
) -> tuple[BernoulliPlan, JumpPlan]:
    """A jump at 4L*n for every zero bit chi_n; bit i sits at n = i + offset.

    The emitted JumpPlan uses L - pi/2 as its quarter spacing so that two
    neighbouring zeros (spacing 4L) meet the rule spacing >= 4L' + 2pi.
    """
    bits = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in bits):
        raise InvalidInput("bits must be 0 or 1")
    if not L > 0 or not _is_multiple_2pi(L):
        raise InvalidInput(f"L={L} must be a positive multiple of 2pi")
    pos = tuple(i + offset for i, b in enumerate(bits) if b == 0)
    if len(pos) < 2:
        raise InvalidInput("bits must contain at least two zeros")
    rate = TWO_PI * math.log(2.0) / (4.0 * L)
    bp = BernoulliPlan(bits, float(omega), float(L), int(offset), pos, rate)
    plan = JumpPlan.create(
        params, np.full(len(pos) + 1, float(omega)), L - np.pi / 2, 4.0 * L * np.asarray(pos, float), s1=s1
    )
    return bp, plan


# ---------------------------------------------------------------- q0
class HeteroclinicTemplate:
    """Spline of a two-sided minimizer with linear torus tails outside its grid.

    ``T`` is the spline root of u = pi and ``V = v(T)``.
    """

    def __init__(self, curve):
        tr: Trajectory = curve.trajectory
        if curve.omega_tilde is None:
            raise InvalidInput("heteroclinic must be a two-sided minimizer")
        self.omega = float(curve.omega)
        self.omega_tilde = float(curve.omega_tilde)
        t = tr.t
        self.t_lo, self.t_hi = float(t[0]), float(t[-1])
        self.u_lo, self.u_hi = float(tr.u[0]), float(tr.u[-1])
        self.v_lo, self.v_hi = float(tr.v[0]), float(tr.v[-1])
        self._su = CubicSpline(t, tr.u)
        self._sv = CubicSpline(t, tr.v)
        d = tr.u - np.pi
        cross = np.nonzero((d[:-1] <= 0) & (d[1:] > 0))[0]
        if cross.size == 0:
            raise InvalidInput("heteroclinic never crosses u = pi")
        t_anchor = curve.anchor[0]
        i = int(cross[np.argmin(np.abs(t[cross] - t_anchor))])
        if d[i] == 0.0:
            T = float(t[i])
        else:
            T = brentq(lambda x: float(self._su(x)) - np.pi, t[i], t[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
        self.T = float(T)
        self.V = float(self._sv(T))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t_lo) & (t <= self.t_hi)
        tc = np.clip(t, self.t_lo, self.t_hi)
        u = np.where(inside, self._su(tc), np.where(t < self.t_lo, self.u_lo, self.u_hi))
        v = np.where(
            inside,
            self._sv(tc),
            np.where(
                t < self.t_lo,
                self.v_lo + self.omega * (t - self.t_lo),
                self.v_hi + self.omega_tilde * (t - self.t_hi),
            ),
        )
        return u, v


def _half_open_residue(x: float) -> float:
    """x - 2pi*m in (-pi, pi]."""
    r = math.fmod(x, TWO_PI)
    if r <= -np.pi:
        r += TWO_PI
    elif r > np.pi:
        r -= TWO_PI
    return r


@dataclass
class ShadowSeed:
    """The blended orbit q0: callable ``evaluate`` plus its grid samples."""

    plan: JumpPlan
    templates: list[HeteroclinicTemplate]
    trajectory: Trajectory
    shifts: list[tuple[float, float]] = field(default_factory=list)

    def piece(self, k: int, t):
        """q~_k(t) = (u_k(t - T~_k + T_k) + 2k pi, v_k(...) + V~_k - V_k)."""
        tpl = self.templates[k]
        dt_k, dv_k = self.shifts[k]
        u, v = tpl(np.asarray(t, dtype=float) - dt_k)
        return u + TWO_PI * k, v + dv_k

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        plan = self.plan
        Tt = plan.T_tilde
        K = plan.n_jumps
        u = np.empty(t.shape)
        v = np.empty(t.shape)
        j = np.searchsorted(Tt, t, side="right")  # t in [T~_{j-1}, T~_j)
        for seg in range(K + 1):
            sel = j == seg
            if not np.any(sel):
                continue
            ts = t[sel]
            if seg == 0:
                u[sel], v[sel] = self.piece(0, ts)
            elif seg == K:
                u[sel], v[sel] = self.piece(K - 1, ts)
            else:
                a, b = Tt[seg - 1] + plan.L, Tt[seg] - plan.L
                pm, pp = smoothstep(a, b, ts)
                u1, v1 = self.piece(seg - 1, ts)
                u2, v2 = self.piece(seg, ts)
                u[sel] = pm * u1 + pp * u2
                v[sel] = pm * v1 + pp * v2
        return u, v

    __call__ = evaluate


def build_q0(
    params: SystemParams,
    plan: JumpPlan,
    heteroclinics: Sequence,
    dt: float | None = None,
    pad: float | None = None,
) -> ShadowSeed:
    """Translate heteroclinic k to jump time T~_k, blend neighbours, sample on a clamped grid.

    The grid spans [T~_0 - pad, T~_{K-1} + pad] with pad = L + 10/sqrt(eps)
    rounded up to a multiple of dt, so every window [T~_k - L, T~_k + L] stays
    clear of the clamped ends.  The returned plan copy records T, V, T~, V~.
    """
    K = plan.n_jumps
    if len(heteroclinics) != K or any(h is None for h in heteroclinics):
        raise InvalidInput(f"need one heteroclinic per jump ({K}), got {len(heteroclinics)}")
    tpls = [HeteroclinicTemplate(h) for h in heteroclinics]
    for k, tp in enumerate(tpls):
        if abs(tp.omega - plan.omegas[k]) > 1e-12 or abs(tp.omega_tilde - plan.omegas[k + 1]) > 1e-12:
            raise InvalidInput(
                f"heteroclinic {k} connects ({tp.omega}, {tp.omega_tilde}), plan needs "
                f"({plan.omegas[k]}, {plan.omegas[k + 1]})"
            )
    T = np.array([tp.T for tp in tpls])
    V = np.array([tp.V for tp in tpls])
    Tt = np.empty(K)
    for k in range(K):
        r = _half_open_residue(T[k] - plan.Ltilde[k])
        m = round((plan.Ltilde[k] + r - T[k]) / TWO_PI)
        Tt[k] = T[k] + TWO_PI * m
    Vt = np.empty(K)
    Vt[0] = V[0]
    for k in range(1, K):
        prev = tpls[k - 1]
        v_prev = float(prev(Tt[k] - Tt[k - 1] + T[k - 1])[1]) + Vt[k - 1] - V[k - 1]
        r = _half_open_residue(v_prev - V[k])
        m = round((v_prev - r - V[k]) / TWO_PI)
        Vt[k] = V[k] + TWO_PI * m
    new_plan = replace(plan, T=T, V=V, T_tilde=Tt, V_tilde=Vt)
    if K > 1 and np.any(np.diff(Tt) < 2.0 * plan.L):
        raise InvalidInput("jump times closer than 2L; blend windows would overlap")

    se = params.sqrt_eps
    h = heteroclinics[0].trajectory.dt if dt is None else float(dt)
    p = plan.L + 10.0 / se if pad is None else float(pad)
    p = h * math.ceil(p / h - 1e-9)
    t_lo = float(Tt[0] - p)
    n = int(round((Tt[-1] + p - t_lo) / h)) + 1
    seed = ShadowSeed(new_plan, tpls, None, [(Tt[k] - T[k], Vt[k] - V[k]) for k in range(K)])
    t = t_lo + h * np.arange(n)
    u, v = seed.evaluate(t)
    u[0] = 0.0
    u[-1] = TWO_PI * K
    seed.trajectory = Trajectory(
        t_lo, h, u, v,
        left=BoundaryCondition("clamped", 0, float(plan.omegas[0])),
        right=BoundaryCondition("clamped", K, float(plan.omegas[-1])),
    )
    return seed


def u_envelope_constant(params: SystemParams, plan: JumpPlan, q: Trajectory) -> float:
    """Smallest C with |u - 2k(t)pi| <= C exp(-sqrt(eps)||t||/2) on the grid."""
    t = q.t
    k = plan.k_of_t(t)
    dist = plan.jump_distance(t)
    return float(np.max(np.abs(q.u - TWO_PI * k) * np.exp(0.5 * params.sqrt_eps * dist)))


def v_envelope_constant(plan: JumpPlan, q: Trajectory) -> float:
    """Smallest C with |v - V~_{k-1} - w~_k (t - T~_{k-1})| <= C (1 ^ M) between jumps.

    Outside the first and last jump the ramp runs at omega_0 / omega_K from the
    nearest anchor.
    """
    Tt, Vt = plan.T_tilde, plan.V_tilde
    t = q.t
    j = np.searchsorted(Tt, t, side="right")
    ref = np.empty_like(t)
    K = plan.n_jumps
    left = j == 0
    right = j == K
    ref[left] = Vt[0] + plan.omegas[0] * (t[left] - Tt[0])
    ref[right] = Vt[-1] + plan.omegas[-1] * (t[right] - Tt[-1])
    mid = ~(left | right)
    if np.any(mid):
        jm = j[mid]
        slope = (Vt[jm] - Vt[jm - 1]) / (Tt[jm] - Tt[jm - 1])
        ref[mid] = Vt[jm - 1] + slope * (t[mid] - Tt[jm - 1])
    return float(np.max(np.abs(q.v - ref)) / min(1.0, plan.M))
