"""Sublevel neighborhoods of minima on sampled fields (torus grid or local patch).

Nodes are added in increasing value order and merged with their 8 neighbors by
union-find.  Each tracked component (one per global minimum) grows until the
next node would make it wrap the torus, touch a patch edge, merge with another
tracked component, or exceed the diameter cap.  The value of that node is the
smallest value on the component's outer boundary, so ``gap = value - min``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInput

Sampler = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples ``values[i, j]`` at ``(t_origin + i*dt, v_origin + j*dv)``."""

    values: np.ndarray
    t_origin: float
    v_origin: float
    dt: float
    dv: float
    periodic: bool = True
    omega: float = 0.0
    omega_tilde: float | None = None
    quantity: str = "M"
    sampler: Sampler | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def t_grid(self) -> np.ndarray:
        return self.t_origin + self.dt * np.arange(self.shape[0])

    @property
    def v_grid(self) -> np.ndarray:
        return self.v_origin + self.dv * np.arange(self.shape[1])

    @property
    def diag(self) -> float:
        return float(np.hypot(self.dt, self.dv))

    def rows(self) -> np.ndarray:
        """(t0, v0, value) rows, t-major, for CSV export."""
        tt, vv = np.meshgrid(self.t_grid, self.v_grid, indexing="ij")
        return np.column_stack([tt.ravel(), vv.ravel(), self.values.ravel()])


@dataclass
class Neighborhood:
    t0: float
    v0: float
    value: float
    gap: float
    level: float
    diameter: float
    nodes: np.ndarray
    boundary: np.ndarray
    stop_reason: str

    def as_dict(self) -> dict:
        return {
            "t0": self.t0,
            "v0": self.v0,
            "value": self.value,
            "gap": self.gap,
            "diameter": self.diameter,
            "stop_reason": self.stop_reason,
            "boundary": self.boundary.tolist(),
        }

    def contains(self, t: float, v: float, tol: float = 0.0) -> bool:
        """Point inside the closed polygon spanned by the boundary ring."""
        return signed_distance(self.boundary, t, v) <= tol


_NEIGH = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


class _Forest:
    """Union-find over grid nodes with unwrapped integer coordinates per component."""

    def __init__(self, n: int, nv: int):
        self.nv = nv
        self.parent = np.arange(n)
        self.off = np.zeros((n, 2), dtype=np.int64)  # uw(x) - uw(parent[x])
        self.base = np.array([divmod(i, nv) for i in range(n)], dtype=np.int64)

    def find(self, x: int) -> tuple[int, np.ndarray]:
        """Root of x and uw(x) in the root's frame."""
        path = []
        while self.parent[x] != x:
            path.append(x)
            x = int(self.parent[x])
        root = x
        acc = np.zeros(2, dtype=np.int64)
        for node in reversed(path):
            acc = acc + self.off[node]
            self.off[node] = acc
            self.parent[node] = root
        rel = self.off[path[0]].copy() if path else np.zeros(2, dtype=np.int64)
        return root, self.base[root] + rel

    def attach(self, child_root: int, root: int, shift: np.ndarray) -> None:
        """Make child_root a child of root; uw_root = uw_child + shift."""
        self.parent[child_root] = root
        self.off[child_root] = self.base[child_root] + shift - self.base[root]


def _pairwise_max(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0 or b.size == 0:
        return 0.0
    d = a[:, None, :] - b[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))))


def _hull_points(pts: np.ndarray) -> np.ndarray:
    """Convex hull vertices (monotone chain); the diameter only depends on these."""
    p = np.unique(pts, axis=0)
    if len(p) <= 3:
        return p

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for q in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    upper: list = []
    for q in p[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


@dataclass
class _Piece:
    """Members of one union-find component in its root frame."""

    members: list
    hull: np.ndarray
    diam: float = 0.0
    seed: int | None = None
    seed_uw: np.ndarray | None = None
    frozen: bool = False
    wrapped: bool = False

    def shifted(self, shift: np.ndarray, scale: np.ndarray) -> "_Piece":
        return _Piece(
            [m + shift for m in self.members],
            self.hull + shift.astype(float) * scale,
            self.diam,
            self.seed,
            None if self.seed_uw is None else self.seed_uw + shift,
            self.frozen,
            self.wrapped,
        )


def _merged_diam(pieces: list[_Piece]) -> float:
    d = max(p.diam for p in pieces)
    for a in range(len(pieces)):
        for b in range(a + 1, len(pieces)):
            d = max(d, _pairwise_max(pieces[a].hull, pieces[b].hull))
    return d


def find_local_minima(fld: GridField, min_tol: float) -> list[tuple[int, int]]:
    """Grid-local minima (8-neighborhood) within ``min_tol`` of the global minimum."""
    vals = fld.values
    nt, nv = vals.shape
    gmin = float(vals.min())
    out = []
    for i, j in zip(*np.nonzero(vals <= gmin + min_tol)):
        x = vals[i, j]
        ok = True
        for di, dj in _NEIGH:
            a, b = i + di, j + dj
            if fld.periodic:
                a, b = a % nt, b % nv
            elif not (0 <= a < nt and 0 <= b < nv):
                continue
            if vals[a, b] < x:
                ok = False
                break
        if ok:
            out.append((int(i), int(j)))
    return _dedupe_adjacent(out, nt, nv, fld.periodic)


def _dedupe_adjacent(cells, nt, nv, periodic):
    """Keep one representative per 8-connected cluster of tied minima."""
    left = set(cells)
    reps = []
    for c in cells:
        if c not in left:
            continue
        reps.append(c)
        stack = [c]
        left.discard(c)
        while stack:
            i, j = stack.pop()
            for di, dj in _NEIGH:
                a, b = i + di, j + dj
                if periodic:
                    a, b = a % nt, b % nv
                if (a, b) in left:
                    left.discard((a, b))
                    stack.append((a, b))
    return reps


def grow_neighborhoods(
    fld: GridField,
    max_diameter: float | None = None,
    min_tol: float | None = None,
    reference_min: float | None = None,
    seeds: list[tuple[int, int]] | None = None,
) -> list[Neighborhood]:
    """Grow one sublevel neighborhood per global minimum.

    ``max_diameter`` caps the diameter of the closed neighborhood, taken as the
    component diameter plus two grid diagonals (the boundary ring).
    ``reference_min`` lowers the reference value the gap is measured from.
    """
    vals = np.asarray(fld.values, dtype=float)
    if vals.ndim != 2 or min(vals.shape) < 3:
        raise InvalidInput("field must be a 2-d grid of at least 3x3")
    nt, nv = vals.shape
    n = nt * nv
    flat = vals.ravel()
    gmin = float(flat.min())
    span = float(flat.max() - gmin)
    if min_tol is None:
        min_tol = 1e-12 * max(1.0, abs(gmin), span)
    ref = gmin if reference_min is None else min(gmin, reference_min)
    if seeds is None:
        seeds = find_local_minima(fld, min_tol)
    seed_ids = {i * nv + j for i, j in seeds}

    scale = np.array([fld.dt, fld.dv])
    origin = np.array([fld.t_origin, fld.v_origin])
    cap = None if max_diameter is None else max_diameter - 2.0 * fld.diag

    order = np.lexsort((np.arange(n), flat))  # by value, ties by index
    added = np.zeros(n, dtype=bool)
    forest = _Forest(n, nv)
    pieces: dict[int, _Piece] = {}
    results: dict[int, Neighborhood] = {}

    def finalize(pc: _Piece, level: float, reason: str) -> None:
        pc.frozen = True
        mem = np.array(pc.members, dtype=np.int64)
        mem_set = {tuple(m) for m in mem.tolist()}
        ring = sorted({(m[0] + di, m[1] + dj) for m in mem_set for di, dj in _NEIGH} - mem_set)
        seed_ij = np.array(divmod(pc.seed, nv), dtype=float)

        def to_phys(a):
            return (np.asarray(a, dtype=float) - pc.seed_uw + seed_ij) * scale + origin

        ring_phys = to_phys(np.array(ring))
        centre = to_phys(pc.seed_uw)
        ang = np.arctan2(ring_phys[:, 1] - centre[1], ring_phys[:, 0] - centre[0])
        ring_phys = ring_phys[np.lexsort((ring_phys[:, 1], ring_phys[:, 0], ang))]
        results[pc.seed] = Neighborhood(
            t0=float(centre[0]),
            v0=float(centre[1]),
            value=float(flat[pc.seed]),
            gap=float(max(level - ref, 0.0)),
            level=float(level),
            diameter=float(pc.diam + 2.0 * fld.diag),
            nodes=to_phys(mem),
            boundary=ring_phys,
            stop_reason=reason,
        )

    live = len(seed_ids)
    for x in order:
        if live == 0:
            break
        x = int(x)
        i, j = divmod(x, nv)
        val = float(flat[x])
        on_edge = (not fld.periodic) and (i in (0, nt - 1) or j in (0, nv - 1))
        # position of x in the frame of each neighboring root
        pos: dict[int, np.ndarray] = {}
        wrapped: set[int] = set()
        for di, dj in _NEIGH:
            a, b = i + di, j + dj
            if fld.periodic:
                a, b = a % nt, b % nv
            elif not (0 <= a < nt and 0 <= b < nv):
                continue
            y = a * nv + b
            if not added[y]:
                continue
            ry, uw_y = forest.find(y)
            px = uw_y - np.array([di, dj])
            if ry in pos:
                if not np.array_equal(pos[ry], px):
                    wrapped.add(ry)
            else:
                pos[ry] = px
        added[x] = True
        own = forest.base[x].copy()
        mine = _Piece([own], own[None, :].astype(float) * scale)
        if x in seed_ids:
            mine.seed, mine.seed_uw = x, own.copy()
        # the largest piece keeps its frame; smaller ones are shifted into it
        roots = sorted(pos, key=lambda r: (-len(pieces[r].members), r))
        if roots:
            r0 = roots[0]
            frame = [pieces[r0], mine.shifted(pos[r0] - own, scale)] + [
                pieces[r].shifted(pos[r0] - pos[r], scale) for r in roots[1:]
            ]
        else:
            r0 = x
            frame = [mine]
        tracked = [p for p in frame if p.seed is not None]
        live_tr = [p for p in tracked if not p.frozen]
        if live_tr:
            reason = None
            if len(tracked) >= 2:
                reason = "merge"
            elif wrapped or any(p.wrapped for p in frame):
                reason = "wrap"
            elif on_edge:
                reason = "edge"
            elif cap is not None and (cap < 0 or _merged_diam(frame) > cap):
                reason = "diameter"
            if reason is not None:
                for p in live_tr:
                    finalize(p, val, reason)
                    live -= 1
        # union
        base = frame[0]
        if len(frame) > 1:
            keep = next((p for p in tracked if p.frozen), tracked[0] if tracked else None)
            base.diam = _merged_diam(frame)
            base.hull = _hull_points(np.vstack([p.hull for p in frame]))
            for p in frame[1:]:
                base.members.extend(p.members)
                base.wrapped = base.wrapped or p.wrapped
            if keep is not None:
                base.seed, base.seed_uw, base.frozen = keep.seed, keep.seed_uw, keep.frozen
            forest.attach(x, r0, pos[r0] - own)
            for r in roots[1:]:
                forest.attach(r, r0, pos[r0] - pos[r])
                del pieces[r]
        base.wrapped = base.wrapped or bool(wrapped)
        pieces[r0] = base
    for s_id in seed_ids:
        if s_id not in results:
            pc = next(p for p in pieces.values() if p.seed == s_id)
            finalize(pc, float(flat.max()), "exhausted")
    return [results[s] for s in sorted(results)]


def signed_distance(ring: np.ndarray, t: float, v: float) -> float:
    """Negative inside the polygon through ``ring`` (ordered by angle)."""
    if len(ring) < 3:
        return float("inf")
    x, y = ring[:, 0], ring[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    inside = False
    for k in range(len(ring)):
        if (y[k] > v) != (yn[k] > v):
            xc = x[k] + (v - y[k]) * (xn[k] - x[k]) / (yn[k] - y[k])
            if t < xc:
                inside = not inside
    ex, ey = xn - x, yn - y
    l2 = ex * ex + ey * ey
    l2 = np.where(l2 == 0, 1.0, l2)
    s = np.clip(((t - x) * ex + (v - y) * ey) / l2, 0.0, 1.0)
    d = float(np.min(np.hypot(x + s * ex - t, y + s * ey - v)))
    return -d if inside else d


def diameter_cap(epsilon: float) -> float:
    """Largest admissible neighborhood diameter, R = 1/(144 sqrt(eps))."""
    return 1.0 / (144.0 * np.sqrt(epsilon))


@dataclass
class GapAnalysis:
    """Global minima of a field with their neighborhoods.

    ``gap`` is the smallest boundary gap over all minima; ``delta = gap/divisor``.
    """

    minima: list[Neighborhood]
    gap: float
    delta: float
    R: float
    divisor: float
    cap: float | None
    passed: bool
    refined: bool

    def as_dict(self) -> dict:
        return {
            "gap": self.gap,
            "delta": self.delta,
            "R": self.R,
            "cap": self.cap,
            "pass": self.passed,
            "refined": self.refined,
            "minima": [m.as_dict() for m in self.minima],
        }


def polish_minimum(sampler: Sampler, t: float, v: float, scale: float) -> tuple[float, float, float]:
    """Local Nelder-Mead polish of a grid minimum through the sampler."""
    from scipy.optimize import minimize

    def fun(x):
        return float(np.asarray(sampler(np.array([x[0]]), np.array([x[1]])))[0])

    x0 = np.array([t, v])
    simplex = np.array([x0, x0 + [scale, 0.0], x0 + [0.0, scale]])
    res = minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": 1e-9 * scale, "fatol": 1e-15, "maxiter": 400},
    )
    return float(res.x[0]), float(res.x[1]), float(res.fun)


def patch_field(
    sampler: Sampler, t: float, v: float, half_width: float, n: int, like: GridField
) -> GridField:
    """Non-periodic square patch centred on (t, v) with n points per side (n odd)."""
    if n % 2 == 0:
        n += 1
    h = 2.0 * half_width / (n - 1)
    tg = t - half_width + h * np.arange(n)
    vg = v - half_width + h * np.arange(n)
    tt, vv = np.meshgrid(tg, vg, indexing="ij")
    vals = np.asarray(sampler(tt.ravel(), vv.ravel()), dtype=float).reshape(n, n)
    return GridField(
        vals, tg[0], vg[0], h, h, periodic=False, omega=like.omega,
        omega_tilde=like.omega_tilde, quantity=like.quantity, sampler=like.sampler,
    )


def analyse_field(
    fld: GridField,
    divisor: float,
    epsilon: float | None = None,
    max_diameter: float | None = None,
    patch_n: int = 31,
    rel_tol: float = 1e-9,
) -> GapAnalysis:
    """Minima of ``fld`` with sublevel neighborhoods and the uniform gap.

    Without a diameter cap the neighborhoods are grown on the full grid.  With
    a cap (``max_diameter`` or the cap derived from ``epsilon``) and a sampler,
    every global minimum is polished and a fresh patch of half-width 0.6*cap is
    sampled around it; growth on the patch stops at the cap or at its edge.
    """
    vals = np.asarray(fld.values, dtype=float)
    span = float(vals.max() - vals.min())
    scale = max(1.0, float(np.abs(vals).max()))
    tol = rel_tol * scale
    cap = max_diameter
    if cap is None and epsilon is not None:
        cap = diameter_cap(epsilon)

    seeds = find_local_minima(fld, min_tol=np.inf)
    refined = fld.sampler is not None and cap is not None
    if refined:
        polished = [
            polish_minimum(fld.sampler, fld.t_origin + i * fld.dt, fld.v_origin + j * fld.dv, 0.5 * min(fld.dt, fld.dv))
            for i, j in seeds
        ]
        gmin = min(p[2] for p in polished)
        keep = [k for k, p in enumerate(polished) if p[2] <= gmin + tol]
    else:
        gmin = float(vals.min())
        keep = [k for k, (i, j) in enumerate(seeds) if vals[i, j] <= gmin + tol]
    glob = [seeds[k] for k in keep]

    if span <= tol:
        flat = grow_neighborhoods(fld, seeds=glob[:1])
        return GapAnalysis(flat, 0.0, 0.0, max(m.diameter for m in flat), divisor, cap, False, False)

    if not refined:
        nbs = grow_neighborhoods(fld, max_diameter=cap, seeds=glob, reference_min=gmin)
    else:
        nbs = []
        centres = [polished[k] for k in keep]
        for tc, vc, _ in centres:
            pf = patch_field(fld.sampler, tc, vc, 0.6 * cap, patch_n, fld)
            m = pf.values.shape[0]
            extra = []
            for to, vo, _ in centres:
                i = int(round((to - pf.t_origin) / pf.dt))
                j = int(round((vo - pf.v_origin) / pf.dv))
                if 0 <= i < m and 0 <= j < m:
                    extra.append((i, j))
            got = grow_neighborhoods(pf, max_diameter=cap, seeds=extra, reference_min=gmin)
            centre = min(got, key=lambda nb: np.hypot(nb.t0 - tc, nb.v0 - vc))
            nbs.append(centre)
    gap = min(nb.gap for nb in nbs) if nbs else 0.0
    R = max(nb.diameter for nb in nbs) if nbs else 0.0
    bounded = all(nb.stop_reason != "exhausted" for nb in nbs)
    ok = gap > 0 and bounded and (cap is None or R <= cap)
    return GapAnalysis(nbs, gap, gap / divisor, R, divisor, cap, bool(ok), refined)
