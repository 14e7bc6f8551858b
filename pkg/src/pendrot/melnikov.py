"""Melnikov primitive along the unperturbed separatrix and condition (S2).

Each coupling term a*cos(m u + n v + p t + phi) contributes

    -eps * a * Re[ exp(i(n v0 + p t0 + phi)) * I(m, n*omega + p) ],
    I(m, k) = int (1 - cos u(s)) exp(i(m u(s) + k s)) ds,

with u the separatrix.  The integrals I are evaluated once per (omega, term) by
the trapezoid rule, which converges geometrically for this integrand (analytic
in the strip |Im s| < pi/(2 sqrt(eps))).  The field over (t0, v0) is then a
trigonometric polynomial evaluated in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import InvalidInput
from .model import SystemParams
from .neighborhoods import GapAnalysis, GridField, Neighborhood, analyse_field, diameter_cap
from .separatrix import pendulum_kink

TAIL = 1e-14

MelnikovField = GridField


def quadrature_window(epsilon: float, tail: float = TAIL) -> float:
    """Half-width W with 2 sech^2(sqrt(eps) W) < tail."""
    # 2 sech^2(x) < 8 exp(-2x)
    return float(np.log(8.0 / tail) / (2.0 * np.sqrt(epsilon)))


def _envelope(eps: float, s: np.ndarray) -> np.ndarray:
    """1 - cos u(s) = 2 sech^2(sqrt(eps) s)."""
    x = np.abs(np.sqrt(eps) * s)
    e = np.exp(-2.0 * x)
    return 8.0 * e / (1.0 + e) ** 2


def quadrature_step(epsilon: float, freq: float) -> float:
    """Trapezoid step giving an aliasing error below ~1e-16 relative.

    The error of the rule with step h on a strip of half-width d decays like
    exp(-2 pi d / h + |k| d); the step keeps that exponent below -37.
    """
    d = np.pi / (2.0 * np.sqrt(epsilon))
    return float(min(0.1 / np.sqrt(epsilon), 2.0 * np.pi * d / (37.0 + abs(freq) * d) / 2.0))


@dataclass(frozen=True)
class MelnikovCoefficients:
    """M_omega(t0, v0) = sum_j Re[c_j exp(i(n_j v0 + p_j t0))]."""

    omega: float
    epsilon: float
    n: np.ndarray
    p: np.ndarray
    coeff: np.ndarray
    step: float = field(default=0.0)

    def __call__(self, t0, v0):
        t0 = np.asarray(t0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        out = np.zeros(np.broadcast(t0, v0).shape)
        for n, p, c in zip(self.n, self.p, self.coeff):
            out = out + (c * np.exp(1j * (n * v0 + p * t0))).real
        return out


def melnikov_coefficients(params: SystemParams, omega: float, step: float | None = None) -> MelnikovCoefficients:
    eps = params.epsilon
    W = quadrature_window(eps)
    ns, ps, cs = [], [], []
    for term in params.coupling.terms:
        k = term.freq_v * omega + term.freq_t
        h = quadrature_step(eps, k) if step is None else float(step)
        m = int(np.ceil(W / h))
        s = h * np.arange(-m, m + 1)
        env = _envelope(eps, s)
        phase = k * s
        if term.freq_u:
            phase = phase + term.freq_u * pendulum_kink(np.sqrt(eps), s)[0]
        integral = h * np.sum(env * np.exp(1j * phase))
        ns.append(term.freq_v)
        ps.append(term.freq_t)
        cs.append(-eps * term.amplitude * np.exp(1j * term.phase) * integral)
    used = step if step is not None else min(
        [quadrature_step(eps, t.freq_v * omega + t.freq_t) for t in params.coupling.terms] or [0.0]
    )
    return MelnikovCoefficients(float(omega), eps, np.array(ns), np.array(ps), np.array(cs, dtype=complex), float(used))


def melnikov_primitive(params: SystemParams, omega: float, t0, v0, step: float | None = None):
    """M_omega(t0, v0); broadcasts over array-valued t0, v0."""
    val = melnikov_coefficients(params, omega, step)(t0, v0)
    return float(val) if np.ndim(val) == 0 else val


def melnikov_oracle(params: SystemParams, omega: float, t0: float, v0: float) -> float:
    """Adaptive quadrature of the raw real integrand (independent of the trapezoid route)."""
    eps = params.epsilon
    rate = np.sqrt(eps)

    def integrand(s):
        u = pendulum_kink(rate, s)[0]
        return float((1.0 - np.cos(u)) * params.coupling(u, v0 + omega * s, t0 + s))

    W = quadrature_window(eps)
    edges = np.linspace(-W, W, 65)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = quad(integrand, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)
        total += val
    return float(-eps * total)


def scan_field(params: SystemParams, omega: float, n_t: int, n_v: int) -> MelnikovField:
    if n_t < 8 or n_v < 8:
        raise InvalidInput("scan grids need at least 8 points per side")
    coef = melnikov_coefficients(params, omega)
    dt, dv = 2.0 * np.pi / n_t, 2.0 * np.pi / n_v
    tt, vv = np.meshgrid(dt * np.arange(n_t), dv * np.arange(n_v), indexing="ij")
    vals = coef(tt, vv)
    return GridField(vals, 0.0, 0.0, dt, dv, periodic=True, omega=float(omega), quantity="M", sampler=coef)


def find_minima_with_gap(
    field: MelnikovField, epsilon: float | None = None, max_diameter: float | None = None
) -> GapAnalysis:
    """Global minima of M with sublevel neighborhoods; ``delta`` is the gap over 4.

    Passing ``epsilon`` imposes the diameter cap R = 1/(144 sqrt(eps)).
    """
    return analyse_field(field, divisor=4.0, epsilon=epsilon, max_diameter=max_diameter)


@dataclass
class S2Report:
    omega_range: tuple[float, float]
    omegas: list[float]
    delta0_tilde: float
    R: float
    R_cap: float
    per_omega: list[GapAnalysis]
    passed: bool

    @property
    def minima(self) -> list[list[Neighborhood]]:
        return [g.minima for g in self.per_omega]

    def as_dict(self) -> dict:
        return {
            "omega_range": list(self.omega_range),
            "delta0_tilde": self.delta0_tilde,
            "R": self.R,
            "R_cap": self.R_cap,
            "pass": self.passed,
            "per_omega": [{"omega": w, **g.as_dict()} for w, g in zip(self.omegas, self.per_omega)],
        }


def check_S2(
    params: SystemParams, omega_lo: float, omega_hi: float, n_omega: int, n_t: int = 64, n_v: int = 64
) -> S2Report:
    if omega_lo > omega_hi:
        raise InvalidInput("omega_lo must not exceed omega_hi")
    n_omega = max(1, int(n_omega))
    omegas = [float(omega_lo)] if n_omega == 1 or omega_lo == omega_hi else list(
        np.linspace(omega_lo, omega_hi, n_omega)
    )
    res = [find_minima_with_gap(scan_field(params, w, n_t, n_v), epsilon=params.epsilon) for w in omegas]
    delta = min(r.delta for r in res)
    R = max(r.R for r in res)
    cap = diameter_cap(params.epsilon)
    ok = all(r.passed for r in res) and delta > 0 and R <= cap
    return S2Report((float(omega_lo), float(omega_hi)), [float(w) for w in omegas], delta, R, cap, res, bool(ok))
