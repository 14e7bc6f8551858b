"""Pendulum-rotator system: coupling, potential, adjusted Lagrangian, EL residual."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInput
from .trajectory import Trajectory


@dataclass(frozen=True)
class CouplingTerm:
    """One term a*cos(m*u + n*v + p*t + phase)."""

    amplitude: float
    freq_u: int
    freq_v: int
    freq_t: int
    phase: float = 0.0

    def __post_init__(self) -> None:
        for name in ("freq_u", "freq_v", "freq_t"):
            val = getattr(self, name)
            if int(val) != val:
                raise InvalidInput(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "phase", float(self.phase))


@dataclass(frozen=True)
class CouplingFunction:
    """Trigonometric polynomial f(u, v, t) = sum a_i cos(m_i u + n_i v + p_i t + phi_i)."""

    terms: tuple[CouplingTerm, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))

    # catalog
    @classmethod
    def arnold(cls) -> "CouplingFunction":
        return cls((CouplingTerm(0.5, 0, 1, 0), CouplingTerm(0.5, 0, 0, 1)))

    @classmethod
    def constant(cls, c: float) -> "CouplingFunction":
        return cls((CouplingTerm(c, 0, 0, 0),))

    @classmethod
    def zero(cls) -> "CouplingFunction":
        return cls(())

    @classmethod
    def from_records(cls, records: Iterable[dict | Sequence]) -> "CouplingFunction":
        terms = []
        for rec in records:
            if isinstance(rec, dict):
                terms.append(
                    CouplingTerm(
                        rec["amplitude"], rec["m"], rec["n"], rec["p"], rec.get("phase", 0.0)
                    )
                )
            else:
                terms.append(CouplingTerm(*rec))
        return cls(tuple(terms))

    def to_records(self) -> list[dict]:
        return [
            {"amplitude": c.amplitude, "m": c.freq_u, "n": c.freq_v, "p": c.freq_t, "phase": c.phase}
            for c in self.terms
        ]

    # coefficient bounds
    @property
    def sup_bound(self) -> float:
        return float(sum(abs(c.amplitude) for c in self.terms))

    @property
    def sup_bound_u(self) -> float:
        return float(sum(abs(c.amplitude * c.freq_u) for c in self.terms))

    @property
    def sup_bound_v(self) -> float:
        return float(sum(abs(c.amplitude * c.freq_v) for c in self.terms))

    @property
    def depends_on_u(self) -> bool:
        return any(c.freq_u != 0 and c.amplitude != 0 for c in self.terms)

    def derivatives(self, u, v, t, order: int = 1):
        """Return f and its partials up to `order` (0, 1 or 2).

        Order 1 gives (f, f_u, f_v); order 2 appends (f_uu, f_uv, f_vv).
        """
        u, v, t = np.broadcast_arrays(
            np.asarray(u, dtype=float), np.asarray(v, dtype=float), np.asarray(t, dtype=float)
        )
        f = np.zeros(u.shape)
        out = [f]
        if order >= 1:
            fu = np.zeros(u.shape)
            fv = np.zeros(u.shape)
            out += [fu, fv]
        if order >= 2:
            fuu = np.zeros(u.shape)
            fuv = np.zeros(u.shape)
            fvv = np.zeros(u.shape)
            out += [fuu, fuv, fvv]
        for c in self.terms:
            arg = c.freq_u * u + c.freq_v * v + c.freq_t * t + c.phase
            cs = np.cos(arg)
            f += c.amplitude * cs
            if order >= 1:
                sn = np.sin(arg)
                fu -= c.amplitude * c.freq_u * sn
                fv -= c.amplitude * c.freq_v * sn
            if order >= 2:
                fuu -= c.amplitude * c.freq_u * c.freq_u * cs
                fuv -= c.amplitude * c.freq_u * c.freq_v * cs
                fvv -= c.amplitude * c.freq_v * c.freq_v * cs
        return tuple(out) if order >= 1 else f

    def __call__(self, u, v, t):
        return self.derivatives(u, v, t, order=0)


@dataclass(frozen=True)
class SystemParams:
    epsilon: float
    mu: float
    coupling: CouplingFunction = field(default_factory=CouplingFunction.arnold)

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise InvalidInput(f"epsilon must be positive, got {self.epsilon}")
        if not self.mu >= 0:
            raise InvalidInput(f"mu must be nonnegative, got {self.mu}")

    @property
    def sqrt_eps(self) -> float:
        return float(np.sqrt(self.epsilon))

    def with_mu(self, mu: float) -> "SystemParams":
        return SystemParams(self.epsilon, mu, self.coupling)


@dataclass(frozen=True)
class AdjustedSpeed:
    omega: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.omega):
            raise InvalidInput("omega must be finite")


def potential(params: SystemParams, u, v, t):
    f = params.coupling(u, v, t)
    return params.epsilon * (1.0 - np.cos(u)) * (1.0 - params.mu * f)


def grad_potential(params: SystemParams, u, v, t):
    """(V_u, V_v) of the potential."""
    eps, mu = params.epsilon, params.mu
    f, fu, fv = params.coupling.derivatives(u, v, t, order=1)
    one_m_cos = 1.0 - np.cos(u)
    vu = eps * np.sin(u) * (1.0 - mu * f) - eps * mu * one_m_cos * fu
    vv = -eps * mu * one_m_cos * fv
    return vu, vv


def hess_potential(params: SystemParams, u, v, t):
    """(V_uu, V_uv, V_vv)."""
    eps, mu = params.epsilon, params.mu
    f, fu, fv, fuu, fuv, fvv = params.coupling.derivatives(u, v, t, order=2)
    s, c = np.sin(u), np.cos(u)
    vuu = eps * c * (1.0 - mu * f) - 2.0 * eps * mu * s * fu - eps * mu * (1.0 - c) * fuu
    vuv = -eps * mu * s * fv - eps * mu * (1.0 - c) * fuv
    vvv = -eps * mu * (1.0 - c) * fvv
    return vuu, vuv, vvv


def lagrangian_density(params: SystemParams, omega: float, u, v, u_t, v_t, t):
    return 0.5 * np.square(u_t) + 0.5 * np.square(np.asarray(v_t) - omega) + potential(params, u, v, t)


def el_residual(params: SystemParams, q: Trajectory) -> Trajectory:
    """Centered-difference residual (u_tt - V_u, v_tt - V_v).

    Endpoints are zero-filled; ``interior_mask`` on the returned trajectory flags them.
    """
    n = q.n
    if n < 3:
        raise InvalidInput("el_residual needs at least 3 grid points")
    t = q.t
    h2 = q.dt * q.dt
    ru = np.zeros(n)
    rv = np.zeros(n)
    vu, vv = grad_potential(params, q.u[1:-1], q.v[1:-1], t[1:-1])
    ru[1:-1] = (q.u[2:] - 2.0 * q.u[1:-1] + q.u[:-2]) / h2 - vu
    rv[1:-1] = (q.v[2:] - 2.0 * q.v[1:-1] + q.v[:-2]) / h2 - vv
    return q.replace(u=ru, v=rv)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    quantity: str
    value: float
    limit: float


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "pass": self.passed,
            "checks": [
                {"name": c.name, "pass": c.passed, "quantity": c.quantity, "value": c.value, "limit": c.limit}
                for c in self.checks
            ],
        }


def validate_assumptions(params: SystemParams) -> AssumptionReport:
    cp = params.coupling
    eps, mu = params.epsilon, params.mu
    checks = (
        AssumptionCheck("A1.sup_f", cp.sup_bound <= 1.0, "sum|a_i|", cp.sup_bound, 1.0),
        AssumptionCheck("A1.sup_fv", cp.sup_bound_v <= 1.0, "sum|a_i n_i|", cp.sup_bound_v, 1.0),
        AssumptionCheck("A2.mu_nonneg", mu >= 0.0, "mu", mu, 0.0),
        AssumptionCheck("A2.mu_vs_eps", 16.0 * mu <= eps, "16*mu", 16.0 * mu, eps),
        AssumptionCheck("A2.eps_le_1", eps <= 1.0, "epsilon", eps, 1.0),
    )
    return AssumptionReport(checks)
