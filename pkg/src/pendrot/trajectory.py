"""Grid-sampled curves q = (u, v) on a uniform t-grid."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class BoundaryCondition:
    """End condition: ``clamped`` pins u = 2k*pi and v to the ramp of slope omega."""

    kind: str = "clamped"
    k: int = 0
    omega: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("clamped", "free"):
            raise InvalidInput(f"unknown boundary kind {self.kind!r}")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "k": int(self.k), "omega": float(self.omega)}


@dataclass(frozen=True, eq=False)
class Trajectory:
    t_lo: float
    dt: float
    u: np.ndarray
    v: np.ndarray
    left: BoundaryCondition = field(default_factory=lambda: BoundaryCondition("free"))
    right: BoundaryCondition = field(default_factory=lambda: BoundaryCondition("free"))

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise InvalidInput("dt must be positive")
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if u.ndim != 1 or u.shape != v.shape:
            raise InvalidInput("u and v must be 1-d arrays of equal length")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def t(self) -> np.ndarray:
        return self.t_lo + self.dt * np.arange(self.n)

    @property
    def t_hi(self) -> float:
        return self.t_lo + self.dt * (self.n - 1)

    def replace(self, **kw) -> "Trajectory":
        return replace(self, **kw)

    def copy(self) -> "Trajectory":
        return self.replace(u=self.u.copy(), v=self.v.copy())

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of an exact node time."""
        x = (t - self.t_lo) / self.dt
        i = int(round(x))
        if abs(x - i) > tol or not 0 <= i < self.n:
            raise InvalidInput(f"t={t} is not a grid node")
        return i

    def interp(self, t):
        tt = self.t
        return np.interp(t, tt, self.u), np.interp(t, tt, self.v)

    @classmethod
    def from_grid(cls, t: np.ndarray, u, v, **kw) -> "Trajectory":
        t = np.asarray(t, dtype=float)
        if t.size >= 2:
            dt = float((t[-1] - t[0]) / (t.size - 1))
        else:
            dt = 1.0
        return cls(float(t[0]), dt, np.asarray(u, float), np.asarray(v, float), **kw)
