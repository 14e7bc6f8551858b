"""Unperturbed separatrix and explicit stationary sub/super-solutions.

Conventions for the stationary inequality ``z_tt - V_u(z, v, t)``:

* a sub-solution satisfies ``z_tt - V_u >= 0`` for every (v, t),
* a super-solution satisfies ``z_tt - V_u <= 0`` for every (v, t).

The verifier evaluates the worst case over (v, t) through the bounds
``|f| <= B_f`` and ``|f_u| <= B_u`` and reports a margin that is positive
exactly when the strict inequality for the curve's role holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import InternalError, InvalidInput
from .model import SystemParams

TWO_PI = 2.0 * np.pi

KINDS = ("separatrix", "z_minus", "z_plus", "z_tilde_minus", "z_tilde_plus")
# role each kind must satisfy
ROLE = {
    "separatrix": "sub",
    "z_plus": "sub",
    "z_minus": "super",
    "z_tilde_plus": "super",
    "z_tilde_minus": "sub",
}

Evaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


def _sech(x):
    ax = np.abs(x)
    e = np.exp(-ax)
    return 2.0 * e / (1.0 + e * e)


def _arctan_exp_times4(x):
    """4*arctan(exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    neg = 4.0 * np.arctan(np.exp(np.minimum(x, 0.0)))
    pos = TWO_PI - 4.0 * np.arctan(np.exp(-np.maximum(x, 0.0)))
    return np.where(x <= 0.0, neg, pos)


def pendulum_kink(rate: float, t):
    """4*arctan(exp(rate*t)) with first and second derivatives."""
    t = np.asarray(t, dtype=float)
    x = rate * t
    sech = _sech(x)
    z = _arctan_exp_times4(x)
    zt = 2.0 * rate * sech
    ztt = -2.0 * rate * rate * sech * np.tanh(x)
    return z, zt, ztt


def separatrix_u(epsilon: float, t):
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    return pendulum_kink(np.sqrt(epsilon), t)[0]


def separatrix_ut(epsilon: float, t):
    b = np.sqrt(epsilon)
    return 2.0 * b * _sech(b * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class PiecewiseCurve:
    """Curve on ``domain`` made of pieces split at ``breakpoints``.

    ``pieces[i]`` is valid on ``[breakpoints[i-1], breakpoints[i]]``; each returns
    value, first and second derivative arrays.
    """

    domain: tuple[float, float]
    breakpoints: tuple[float, ...]
    pieces: tuple[Evaluator, ...]
    kind: str
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown curve kind {self.kind!r}")
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise InvalidInput("need one more piece than breakpoints")

    @property
    def role(self) -> str:
        return ROLE[self.kind]

    def evaluate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(np.asarray(self.breakpoints), t, side="right")
        z = np.empty_like(t)
        zt = np.empty_like(t)
        ztt = np.empty_like(t)
        for i, piece in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                a, b, c = piece(t[sel])
                z[sel], zt[sel], ztt[sel] = a, b, c
        return z, zt, ztt

    def __call__(self, t):
        return self.evaluate(t)[0]

    def breakpoint_jumps(self) -> list[tuple[float, float, float]]:
        """(|jump in z|, |jump in z_t|, |jump in z_tt|) at each breakpoint."""
        out = []
        for i, b in enumerate(self.breakpoints):
            left = self.pieces[i](np.array([b]))
            right = self.pieces[i + 1](np.array([b]))
            out.append(tuple(float(abs(l[0] - r[0])) for l, r in zip(left, right)))
        return out

    def truncated_domain(self, tail: float) -> tuple[float, float]:
        lo, hi = self.domain
        return (max(lo, -tail), min(hi, tail))

    def sample(self, n: int, interval: tuple[float, float] | None = None) -> np.ndarray:
        """Rows (t, z, z_t) for CSV export."""
        lo, hi = interval if interval is not None else self.domain
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise InvalidInput("sampling needs a bounded interval")
        t = np.linspace(lo, hi, n)
        z, zt, _ = self.evaluate(t)
        return np.column_stack([t, z, zt])


def _separatrix_curve(epsilon: float, kind: str, shift: float = 0.0) -> PiecewiseCurve:
    b = np.sqrt(epsilon)

    def piece(t):
        return pendulum_kink(b, t - shift)

    return PiecewiseCurve((-np.inf, np.inf), (), (piece,), kind, {"rate": b})


def separatrix_curve(epsilon: float) -> PiecewiseCurve:
    return _separatrix_curve(epsilon, "separatrix")


def _bracketed_root(fn: Callable[[float], float], lo: float, hi: float, what: str) -> float:
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise InternalError(f"{what}: bracket [{lo}, {hi}] does not contain a root")
    return brentq(fn, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class SupersubData:
    """Parameters of the glued kink w: slow kink plus a cubic left of t1."""

    rate: float
    cubic: float
    t0: float
    t1: float

    def w(self, t):
        z, zt, ztt = pendulum_kink(self.rate, t)
        t = np.asarray(t, dtype=float)
        d = np.maximum(self.t1 - t, 0.0)
        return z + self.cubic * d**3, zt - 3.0 * self.cubic * d**2, ztt + 6.0 * self.cubic * d


def build_supersub(params: SystemParams) -> tuple[PiecewiseCurve, PiecewiseCurve]:
    """Return (z_minus, z_plus).

    For mu = 0 both are the exact separatrix (relabelled).
    """
    eps, mu = params.epsilon, params.mu
    se = np.sqrt(eps)
    if mu == 0.0:
        zm = _separatrix_curve(eps, "z_minus")
        zp = _separatrix_curve(eps, "z_plus")
        zm = PiecewiseCurve((-np.inf, 0.75 / se), (), zm.pieces, "z_minus", {"t0": 0.0, "t1": 0.0})
        zp = PiecewiseCurve((-0.75 / se, np.inf), (), zp.pieces, "z_plus", {"t0": 0.0, "t1": 0.0})
        return zm, zp
    sm = np.sqrt(mu)
    if 1.0 - 2.0 * sm <= 0.0:
        raise InvalidInput("mu too large for the slowed kink (needs 2*sqrt(mu) < 1)")
    rate = np.sqrt(eps * (1.0 - 2.0 * sm))
    cubic = eps**1.5 * sm

    def g1(t):
        return float(pendulum_kink(rate, t)[0][()]) - (np.pi + 2.0 * sm)

    t1 = _bracketed_root(g1, 0.0, 2.0 * np.sqrt(mu / eps), "t1")
    data0 = SupersubData(rate, cubic, 0.0, t1)

    def g0(t):
        return float(data0.w(np.array([t]))[0][0]) - np.pi

    t0 = _bracketed_root(g0, -sm, 0.0, "t0")
    data = SupersubData(rate, cubic, t0, t1)

    # w(t0) = pi, so the right curve is anchored by w(t + t0)
    def plus_left(t):
        return data.w(t + t0)

    def plus_right(t):
        return pendulum_kink(rate, t + t0)

    def minus_left(t):
        z, zt, ztt = pendulum_kink(rate, -t + t0)
        return TWO_PI - z, zt, -ztt

    def minus_right(t):
        z, zt, ztt = data.w(-t + t0)
        return TWO_PI - z, zt, -ztt

    info = {"t0": t0, "t1": t1, "rate": rate, "cubic": cubic}
    zp = PiecewiseCurve((-0.75 / se, np.inf), (t1 - t0,), (plus_left, plus_right), "z_plus", dict(info))
    zm = PiecewiseCurve((-np.inf, 0.75 / se), (t0 - t1,), (minus_left, minus_right), "z_minus", dict(info))
    return zm, zp


def worst_case_bounds(params: SystemParams) -> tuple[float, float]:
    """(B_f, B_u): bounds on |f| and |f_u|, never below 1."""
    cp = params.coupling
    return max(1.0, cp.sup_bound), max(1.0, cp.sup_bound_u)


def _extreme_force(params: SystemParams, z, sign: int):
    """max (sign=+1) or min (sign=-1) over (v, t) of V_u at u = z."""
    eps, mu = params.epsilon, params.mu
    bf, bu = worst_case_bounds(params)
    s = np.sin(z)
    return eps * s + sign * eps * mu * (bf * np.abs(s) + bu * (1.0 - np.cos(z)))


def build_supersub_tilde(params: SystemParams, eta: float | None = None):
    """Return (z_tilde_minus, z_tilde_plus, T_tilde).

    z_tilde_plus starts at pi with the pendulum speed 2*sqrt(eps_t)*(1+delta^2),
    eps_t = eps*(1+2*sqrt(mu)), delta = 2*sqrt(eps_t*mu), and follows the
    worst-case force lowered by ``eta`` (default eps*mu), which makes it a strict
    super-solution all the way up to 2*pi + sqrt(eps*mu).
    """
    eps, mu = params.epsilon, params.mu
    if not mu > 0:
        raise InvalidInput("build_supersub_tilde needs mu > 0")
    eps_t = eps * (1.0 + 2.0 * np.sqrt(mu))
    delta = 2.0 * np.sqrt(eps_t * mu)
    speed0 = 2.0 * np.sqrt(eps_t) * (1.0 + delta**2)
    eta = eps * mu if eta is None else float(eta)
    target = TWO_PI + np.sqrt(eps * mu)

    def force(z):
        return _extreme_force(params, z, -1) - eta

    def rhs(_t, y):
        return [y[1], force(y[0])]

    def hit(_t, y):
        return y[0] - target

    hit.terminal = True
    hit.direction = 1

    def stall(_t, y):
        return y[1]

    stall.terminal = True
    stall.direction = -1

    horizon = 200.0 / np.sqrt(eps_t)
    sol = solve_ivp(
        rhs, (0.0, horizon), [np.pi, speed0], method="DOP853", rtol=1e-13, atol=1e-14,
        dense_output=True, events=(hit, stall),
    )
    if sol.t_events[0].size == 0:
        raise InternalError("tilde construction did not reach 2*pi + sqrt(eps*mu)")
    t_end = float(sol.t_events[0][0])
    dense = sol.sol

    def state(t):
        y = dense(np.clip(t, 0.0, t_end))
        return y[0], y[1]

    # second derivative from the interpolant itself, not from the ODE
    h = 1e-5 / np.sqrt(eps_t)

    def plus(t):
        t = np.asarray(t, dtype=float)
        z, zt = state(t)
        lo = np.clip(t - h, 0.0, t_end)
        hi = np.clip(t + h, 0.0, t_end)
        ztt = (state(hi)[1] - state(lo)[1]) / (hi - lo)
        return z, zt, ztt

    def minus(t):
        z, zt, ztt = plus(-np.asarray(t, dtype=float))
        return TWO_PI - z, zt, -ztt

    info = {
        "eps_tilde": eps_t,
        "delta": delta,
        "speed0": speed0,
        "eta": eta,
        "T_tilde": t_end,
        "T_constant": t_end * np.sqrt(eps_t) / abs(np.log(delta)),
    }
    zp = PiecewiseCurve((0.0, t_end), (), (plus,), "z_tilde_plus", dict(info))
    zm = PiecewiseCurve((-t_end, 0.0), (), (minus,), "z_tilde_minus", dict(info))
    return zm, zp, t_end


@dataclass(frozen=True)
class VerificationReport:
    kind: str
    role: str
    interval: tuple[float, float]
    grid_n: int
    min_margin: float
    argmin_t: float
    max_margin: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "role": self.role,
            "interval": list(self.interval),
            "grid_n": self.grid_n,
            "min_margin": self.min_margin,
            "argmin_t": self.argmin_t,
            "max_margin": self.max_margin,
            "pass": self.passed,
        }


def stationary_margin(params: SystemParams, curve: PiecewiseCurve, t, role: str | None = None):
    """Signed worst-case margin; positive where the strict inequality holds."""
    role = role or curve.role
    z, _, ztt = curve.evaluate(t)
    if role == "sub":
        return ztt - _extreme_force(params, z, +1)
    if role == "super":
        return _extreme_force(params, z, -1) - ztt
    raise InvalidInput(f"unknown role {role!r}")


def verify_stationary_supersolution(
    params: SystemParams,
    curve: PiecewiseCurve,
    interval: Sequence[float] | None = None,
    grid_n: int | None = None,
    role: str | None = None,
) -> VerificationReport:
    """Grid check of the strict stationary inequality on ``interval``.

    Unbounded ends default to 20/sqrt(eps). ``grid_n`` defaults to 10^4 points per
    unit of sqrt(eps)*t.
    """
    se = params.sqrt_eps
    if interval is None:
        interval = curve.truncated_domain(20.0 / se)
    lo, hi = float(interval[0]), float(interval[1])
    dlo, dhi = curve.domain
    if lo < dlo or hi > dhi or not hi > lo:
        raise InvalidInput(f"interval [{lo}, {hi}] not inside the curve domain {curve.domain}")
    if grid_n is None:
        grid_n = max(1000, int(np.ceil(1e4 * se * (hi - lo))))
    t = np.linspace(lo, hi, grid_n)
    # open interval: drop the endpoints where the inequality may degenerate
    t = t[1:-1] if grid_n > 2 else t
    m = stationary_margin(params, curve, t, role)
    i = int(np.argmin(m))
    return VerificationReport(
        kind=curve.kind,
        role=role or curve.role,
        interval=(lo, hi),
        grid_n=int(grid_n),
        min_margin=float(m[i]),
        argmin_t=float(t[i]),
        max_margin=float(np.max(m)),
        passed=bool(m[i] > 0.0),
    )
