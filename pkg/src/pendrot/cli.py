"""Config-driven pipelines: melnikov-scan, barrier-scan, heteroclinic, shadow-relax, delta1.

Outputs in ``--out``: ``report.json`` (deterministic), ``timing.json`` (wall
clock, excluded from the determinism contract), orbit checkpoints ``*.bin``
and CSV tables.  Exit status: 0 pass, 1 warn, 2 fail, 3 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import barrier, diagnostics, gradientflow, melnikov, shadowing
from .errors import ConfigError, PendrotError
from .model import CouplingFunction, SystemParams, validate_assumptions
from .neighborhoods import analyse_field, diameter_cap
from .orbitfile import plan_hash, read_orbit, write_orbit, write_orbit_csv

log = logging.getLogger("pendrot")

CONFIG_VERSION = 1
PIPELINES = ("melnikov-scan", "barrier-scan", "heteroclinic", "shadow-relax", "delta1")
EXIT = {"pass": 0, "warn": 1, "fail": 2, "error": 3}
_RANK = {"pass": 0, "warn": 1, "fail": 2, "error": 3}


# ---------------------------------------------------------------- config schema
_REQ = object()


def _num(lo=-math.inf, hi=math.inf, lo_open=False, integer=False):
    def check(name, x):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {x!r}")
        if integer and int(x) != x:
            raise ConfigError(f"{name}: expected an integer, got {x!r}")
        if not math.isfinite(x):
            raise ConfigError(f"{name}: must be finite")
        if x < lo or (lo_open and x == lo) or x > hi:
            raise ConfigError(f"{name}={x} outside the allowed range")
        return int(x) if integer else float(x)

    return check


def _list_of(item, min_len=1):
    def check(name, x):
        if not isinstance(x, list) or len(x) < min_len:
            raise ConfigError(f"{name}: expected a list with at least {min_len} entries")
        return [item(f"{name}[{i}]", y) for i, y in enumerate(x)]

    return check


def _choice(*options):
    def check(name, x):
        if x not in options:
            raise ConfigError(f"{name}: expected one of {options}, got {x!r}")
        return x

    return check


def _string(name, x):
    if not isinstance(x, str):
        raise ConfigError(f"{name}: expected a string")
    return x


def _block(schema):
    def check(name, x):
        return _parse_block(name, x, schema)

    return check


def _parse_block(name: str, raw, schema: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    out = {}
    for key, (check, default) in schema.items():
        if key in raw:
            out[key] = check(f"{name}.{key}", raw[key])
        elif default is _REQ:
            raise ConfigError(f"{name}: missing required key {key!r}")
        else:
            out[key] = default
    return out


def _coupling(name, x):
    if x == "arnold":
        return CouplingFunction.arnold()
    if isinstance(x, dict) and set(x) == {"constant"}:
        return CouplingFunction.constant(_num()(f"{name}.constant", x["constant"]))
    if isinstance(x, list):
        terms = []
        schema = {
            "amplitude": (_num(), _REQ),
            "m": (_num(integer=True), _REQ),
            "n": (_num(integer=True), _REQ),
            "p": (_num(integer=True), _REQ),
            "phase": (_num(), 0.0),
        }
        for i, rec in enumerate(x):
            terms.append(_parse_block(f"{name}[{i}]", rec, schema))
        return CouplingFunction.from_records(terms)
    raise ConfigError(f"{name}: expected 'arnold', {{'constant': c}} or a list of terms")


_POS = _num(0.0, lo_open=True)
_POS_INT = _num(1, integer=True)

SCHEMA = {
    "system": {
        "epsilon": (_POS, _REQ),
        "mu": (_num(0.0), _REQ),
        "coupling": (_coupling, None),
    },
    "solver": {
        "step": (_POS, 0.01),
        "horizon": (_POS, 30.0),
        "tol": (_POS, 1e-10),
        "max_iter": (_POS_INT, 100),
    },
    "melnikov": {
        "omega_lo": (_num(), _REQ),
        "omega_hi": (_num(), _REQ),
        "n_omega": (_POS_INT, 1),
        "n_t": (_num(8, integer=True), 64),
        "n_v": (_num(8, integer=True), 64),
    },
    "barrier": {
        "omega_lo": (_num(), _REQ),
        "omega_hi": (_num(), _REQ),
        "n_omega": (_POS_INT, 1),
        "n_t": (_num(8, integer=True), 16),
        "n_v": (_num(8, integer=True), 16),
        "patch_n": (_num(5, integer=True), 21),
    },
    "heteroclinic": {
        "omega": (_num(), _REQ),
        "omega_tilde": (_num(), None),
        "n_scan": (_num(8, integer=True), 32),
        "patch_n": (_num(5, integer=True), 15),
    },
    "shadow": {
        "omegas": (_list_of(_num(), 2), None),
        "ramp": (
            _block({"omega_lo": (_num(), _REQ), "omega_hi": (_num(), _REQ), "bound": (_POS, None)}),
            None,
        ),
        "L": (_POS, 4.0 * math.pi),
        "dt": (_POS, 0.05),
        "ds": (_POS, None),
        "s_max": (_POS, 100.0),
        "min_s": (_num(0.0), 0.0),
        "tol": (_POS, 1e-8),
        "norm": (_choice("ul", "loc"), "ul"),
        "checkpoint_every": (_num(0, integer=True), 0),
        "ceilings": (_list_of(_POS, 2), [20.0, 4.0]),
        "s1": (
            _block({"n_t": (_num(8, integer=True), 16), "n_v": (_num(8, integer=True), 16),
                    "patch_n": (_num(5, integer=True), 21)}),
            None,
        ),
        "initial_orbit": (_string, None),
    },
    "delta1": {
        "omega": (_num(), _REQ),
        "omega_tilde": (_num(), None),
        "e": (_list_of(_num(0.0)), _REQ),
        "dims": (_list_of(_num(1, integer=True)), [4, 8]),
        "budget": (_POS_INT, 200),
        "restarts": (_num(0, integer=True), 0),
    },
}

PIPELINE_BLOCK = {
    "melnikov-scan": "melnikov",
    "barrier-scan": "barrier",
    "heteroclinic": "heteroclinic",
    "shadow-relax": "shadow",
    "delta1": "delta1",
}


@dataclass
class RunConfig:
    pipeline: str
    params: SystemParams
    blocks: dict
    raw: dict
    base_dir: Path = Path(".")


def parse_config(raw, base_dir: Path | str = ".") -> RunConfig:
    """Validate a config document; unknown keys and out-of-range values raise ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"version", "pipeline", *SCHEMA}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    pipeline = raw.get("pipeline")
    if pipeline not in PIPELINES:
        raise ConfigError(f"pipeline must be one of {PIPELINES}, got {pipeline!r}")
    if "system" not in raw:
        raise ConfigError("missing 'system' block")
    blocks = {}
    for name, schema in SCHEMA.items():
        if name in raw:
            blocks[name] = _parse_block(name, raw[name], schema)
        elif name == PIPELINE_BLOCK[pipeline]:
            raise ConfigError(f"pipeline {pipeline!r} needs a {name!r} block")
        else:
            blocks[name] = _parse_block(name, {}, schema) if name == "solver" else None
    sysb = blocks["system"]
    try:
        params = SystemParams(sysb["epsilon"], sysb["mu"], sysb["coupling"] or CouplingFunction.arnold())
    except PendrotError as exc:
        raise ConfigError(str(exc)) from exc
    base_dir = Path(base_dir)
    sh = blocks.get("shadow")
    if sh is not None:
        if (sh["omegas"] is None) == (sh["ramp"] is None):
            raise ConfigError("shadow: give exactly one of 'omegas' or 'ramp'")
        if sh["ramp"] is not None and sh["ramp"]["bound"] is None and sh["s1"] is None:
            raise ConfigError("shadow.ramp without 'bound' needs an 's1' block for the policy step")
        if sh["initial_orbit"] is not None and not (base_dir / sh["initial_orbit"]).is_file():
            raise ConfigError(f"shadow.initial_orbit {sh['initial_orbit']!r} does not exist")
    for name in ("melnikov", "barrier"):
        b = blocks.get(name)
        if b is not None and b["omega_lo"] > b["omega_hi"]:
            raise ConfigError(f"{name}: omega_lo exceeds omega_hi")
    return RunConfig(pipeline, params, blocks, raw, base_dir)


# ---------------------------------------------------------------- report
@dataclass
class RunReport:
    pipeline: str
    config: dict
    seed: int
    checks: list[dict] = field(default_factory=list)
    sections: dict = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    steps: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)

    def check(self, ident: str, status: str, value=None, limit=None, note: str | None = None,
              upper: bool = True) -> None:
        """Record one verdict; ``margin`` is positive when the bound holds."""
        rec = {"id": ident, "status": status, "value": value, "limit": limit}
        if value is not None and limit is not None:
            rec["margin"] = (float(limit) - float(value)) * (1.0 if upper else -1.0)
        if note:
            rec["note"] = note
        self.checks.append(rec)

    def bound(self, ident: str, value: float, limit: float, fail: bool = True, upper: bool = True) -> bool:
        ok = value <= limit if upper else value >= limit
        self.check(ident, "pass" if ok else ("fail" if fail else "warn"), value, limit, upper=upper)
        return bool(ok)

    @property
    def status(self) -> str:
        worst = "pass"
        for c in self.checks:
            if _RANK[c["status"]] > _RANK[worst]:
                worst = c["status"]
        if self.errors:
            worst = "error"
        return worst

    def as_dict(self) -> dict:
        return {
            "pendrot_version": __version__,
            "pipeline": self.pipeline,
            "seed": self.seed,
            "config": self.config,
            "status": self.status,
            "checks": self.checks,
            "sections": self.sections,
            "steps": self.steps,
            "artifacts": sorted(self.artifacts),
            "errors": self.errors,
        }


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(x) for x in r) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------- parallel map
def _pmap(fn, items, workers: int):
    """Order-preserving map; results are identical for any worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _melnikov_job(args):
    params, w, n_t, n_v = args
    fld = melnikov.scan_field(params, w, n_t, n_v)
    return fld.values, fld.dt, fld.dv, melnikov.find_minima_with_gap(fld, epsilon=params.epsilon)


def _barrier_job(args):
    params, w, n_t, n_v, opts, patch_n = args
    fld = barrier.barrier_field(params, w, n_t, n_v, options=opts)
    gap = analyse_field(fld, divisor=3.0, epsilon=params.epsilon, patch_n=patch_n)
    return fld.values, fld.dt, fld.dv, gap


def _heteroclinic_job(args):
    params, w, wt, opts, n_scan, patch_n = args
    nb = barrier.sigma_neighborhood(params, w, wt, options=opts, n_scan=n_scan, patch_n=patch_n)
    curve = barrier.heteroclinic_minimizer(params, w, wt, nb, options=opts)
    return nb, curve


def _omegas(lo, hi, n):
    if n == 1 or lo == hi:
        return [float(lo)]
    return [float(w) for w in np.linspace(lo, hi, n)]


def _solver(cfg: RunConfig) -> barrier.SolverOptions:
    s = cfg.blocks["solver"]
    return barrier.SolverOptions(s["step"], s["horizon"], s["tol"], s["max_iter"])


def _field_rows(values, dt, dv):
    nt, nv = values.shape
    for i in range(nt):
        for j in range(nv):
            yield (i * dt, j * dv, values[i, j])


# ---------------------------------------------------------------- pipelines
def run_melnikov_scan(cfg, rep, out, opts):
    b = cfg.blocks["melnikov"]
    p = cfg.params
    omegas = _omegas(b["omega_lo"], b["omega_hi"], b["n_omega"])
    res = _pmap(_melnikov_job, [(p, w, b["n_t"], b["n_v"]) for w in omegas], opts.workers)
    for i, (vals, dt, dv, _) in enumerate(res):
        path = out / f"melnikov_field_{i:03d}.csv"
        _write_csv(path, ["t0", "v0", "M"], _field_rows(vals, dt, dv))
        rep.artifacts.append(path.name)
    gaps = [r[3] for r in res]
    delta = min(g.delta for g in gaps)
    R = max(g.R for g in gaps)
    cap = diameter_cap(p.epsilon)
    passed = all(g.passed for g in gaps) and delta > 0 and R <= cap
    s2 = melnikov.S2Report((b["omega_lo"], b["omega_hi"]), omegas, delta, R, cap, gaps, bool(passed))
    rep.sections["S2"] = s2.as_dict()
    rep.bound("S2.delta0_tilde_positive", delta, 0.0, upper=False)
    rep.bound("S2.diameter", R, cap)
    rep.check("S2.pass", "pass" if passed else "fail", float(passed), 1.0)


def run_barrier_scan(cfg, rep, out, opts):
    b = cfg.blocks["barrier"]
    p = cfg.params
    so = _solver(cfg)
    omegas = _omegas(b["omega_lo"], b["omega_hi"], b["n_omega"])
    jobs = [(p, w, b["n_t"], b["n_v"], so, b["patch_n"]) for w in omegas]
    res = _pmap(_barrier_job, jobs, opts.workers)
    for i, (vals, dt, dv, _) in enumerate(res):
        path = out / f"barrier_field_{i:03d}.csv"
        _write_csv(path, ["t0", "v0", "S"], _field_rows(vals, dt, dv))
        rep.artifacts.append(path.name)
    s1 = _assemble_s1(p, b["omega_lo"], b["omega_hi"], omegas, [r[3] for r in res])
    rep.sections["S1"] = s1.as_dict()
    rep.bound("S1.Delta0_positive", s1.Delta0, 0.0, upper=False)
    rep.bound("S1.diameter", s1.R, s1.R_cap)
    rep.bound("S1.Delta0_upper", s1.Delta0, s1.upper_bound, fail=False)
    rep.check("S1.pass", "pass" if s1.passed else "fail", float(s1.passed), 1.0)
    return s1


def _assemble_s1(p, lo, hi, omegas, gaps) -> barrier.S1Report:
    delta = min(g.delta for g in gaps)
    R = max(g.R for g in gaps)
    cap = diameter_cap(p.epsilon)
    ok = all(g.passed for g in gaps) and delta > 0 and R <= cap
    return barrier.S1Report((float(lo), float(hi)), omegas, delta, R, cap, gaps, 9.0 * p.sqrt_eps * p.mu, bool(ok))


def _heteroclinic_checks(rep, p, curve, prefix="heteroclinic"):
    info = curve.info
    rep.bound(f"{prefix}.el_residual", float(info["el_residual"]), 1e-3)
    rep.bound(f"{prefix}.c1_defect", float(info["c1_defect"]), 1e-3)
    need = 0.9 * 0.5 * p.sqrt_eps
    rep.bound(f"{prefix}.decay_left", float(info["decay_rate_left"]), need, upper=False)
    rep.bound(f"{prefix}.decay_right", float(info["decay_rate_right"]), need, upper=False)


def run_heteroclinic(cfg, rep, out, opts):
    b = cfg.blocks["heteroclinic"]
    p = cfg.params
    w = b["omega"]
    wt = w if b["omega_tilde"] is None else b["omega_tilde"]
    nb, curve = _heteroclinic_job((p, w, wt, _solver(cfg), b["n_scan"], b["patch_n"]))
    rep.sections["neighborhood"] = nb.as_dict() if hasattr(nb, "as_dict") else {"box": list(nb)}
    rep.sections["heteroclinic"] = curve.as_dict()
    _heteroclinic_checks(rep, p, curve)
    path = write_orbit(out / "heteroclinic.bin", curve.trajectory)
    rep.artifacts.append(path.name)
    if opts.csv:
        rep.artifacts.append(write_orbit_csv(out / "heteroclinic.csv", curve.trajectory).name)


def _s1_for_plan(cfg, rep, omegas, opts):
    sb = cfg.blocks["shadow"]["s1"]
    if sb is None:
        return None
    lo, hi = min(omegas), max(omegas)
    ws = sorted(set(float(w) for w in omegas))
    jobs = [(cfg.params, w, sb["n_t"], sb["n_v"], _solver(cfg), sb["patch_n"]) for w in ws]
    gaps = [r[3] for r in _pmap(_barrier_job, jobs, opts.workers)]
    s1 = _assemble_s1(cfg.params, lo, hi, ws, gaps)
    rep.sections["S1"] = s1.as_dict()
    rep.check("S1.pass", "pass" if s1.passed else "fail", float(s1.passed), 1.0)
    return s1


def build_plan(cfg, rep, opts):
    sh = cfg.blocks["shadow"]
    p = cfg.params
    if sh["omegas"] is not None:
        s1 = _s1_for_plan(cfg, rep, sh["omegas"], opts)
        plan = shadowing.uniform_plan(p, sh["omegas"], sh["L"], s1=s1)
    else:
        r = sh["ramp"]
        s1 = _s1_for_plan(cfg, rep, [r["omega_lo"], r["omega_hi"]], opts)
        bound = r["bound"]
        if bound is None:
            probe = shadowing.JumpPlan.create(p, [r["omega_lo"], r["omega_hi"]], sh["L"], [0.0], s1=s1)
            bound = shadowing.step_bound(probe)
            if not bound > 0:
                raise ConfigError("policy step bound is zero (S1 gap vanished); give ramp.bound")
        plan = shadowing.ramp_plan(p, r["omega_lo"], r["omega_hi"], sh["L"], bound, s1=s1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pr = shadowing.validate_plan(plan, s1=s1, policy=shadowing.PlanPolicy(strict=False))
    rep.sections["plan_validation"] = pr.as_dict()
    for msg in pr.hard_failures:
        rep.check("plan.hard", "fail", note=msg)
    for msg in pr.warnings:
        rep.check("plan.advisory", "warn", note=msg)
    if s1 is None:
        rep.check("plan.step_bound", "warn", note="no S1 report configured; the policy step bound is not certified")
    return plan


def run_shadow_relax(cfg, rep, out, opts):
    sh = cfg.blocks["shadow"]
    p = cfg.params
    so = _solver(cfg)
    plan = build_plan(cfg, rep, opts)
    pairs = sorted({(float(plan.omegas[k]), float(plan.omegas[k + 1])) for k in range(plan.n_jumps)})
    sol = dict(zip(pairs, _pmap(_heteroclinic_job, [(p, a, b, so, 32, 15) for a, b in pairs], opts.workers)))
    nbs, curves = [], []
    for k in range(plan.n_jumps):
        nb, curve = sol[(float(plan.omegas[k]), float(plan.omegas[k + 1]))]
        nbs.append(nb)
        curves.append(curve)
    for i, (a, b) in enumerate(pairs):
        _heteroclinic_checks(rep, p, sol[(a, b)][1], prefix=f"heteroclinic[{i}]")
    seed = shadowing.build_q0(p, plan, curves, dt=sh["dt"])
    plan = seed.plan
    rep.sections["plan"] = plan.as_dict()
    rep.sections["plan_hash"] = plan_hash(plan)
    q0 = seed.trajectory
    if sh["initial_orbit"] is not None:
        q_init, header = read_orbit(cfg.base_dir / sh["initial_orbit"])
        if header["plan_hash"] not in (None, plan_hash(plan)):
            raise ConfigError("initial_orbit was written for a different plan")
        if q_init.n != q0.n or q_init.t_lo != q0.t_lo or q_init.dt != q0.dt:
            raise ConfigError("initial_orbit grid differs from the plan grid")
        q0 = q_init
    rep.artifacts.append(write_orbit(out / "orbit_s0.bin", q0, plan, 0.0).name)

    ledger = diagnostics.BalanceLedger(p, plan, list(range(plan.n_jumps)))
    tubes = diagnostics.TubeLog()
    parity_rows: list[tuple] = []
    ckpt = sh["checkpoint_every"]
    ceil = tuple(sh["ceilings"])

    def audit(state: gradientflow.FlowState) -> None:
        q = state.q
        r = gradientflow.rhs(p, q)
        ledger.record(state.s, q, r)
        tubes.add(diagnostics.tube_audit(p, plan, q, seed, s=state.s, ceilings=ceil))
        for k in range(plan.n_jumps):
            pc = diagnostics.parity_count(plan, q, k, nbs[k])
            parity_rows.append((state.s, k, pc.n, pc.parity, pc.tol_used))
        if ckpt and state.step_count and state.step_count % ckpt == 0:
            rep.artifacts.append(write_orbit(out / f"orbit_step{state.step_count:08d}.bin", q, plan, state.s).name)

    state, cert = gradientflow.relax(
        p, q0, tol=sh["tol"], s_max=sh["s_max"], ds=sh["ds"], norm=sh["norm"], min_s=sh["min_s"],
        center=float(np.mean(plan.T_tilde)), callback=audit, callback_every=opts.audit_every,
    )
    if not ledger.s or ledger.s[-1] != state.s:
        audit(state)
    rep.steps = {"relax_steps": state.step_count, "s_final": state.s, "audits": len(ledger.s)}
    rep.sections["certificate"] = cert.as_dict()
    rep.artifacts.append(write_orbit(out / "orbit_final.bin", state.q, plan, state.s).name)
    if opts.csv:
        rep.artifacts.append(write_orbit_csv(out / "orbit_s0.csv", q0).name)
        rep.artifacts.append(write_orbit_csv(out / "orbit_final.csv", state.q).name)

    _write_csv(out / "balance_ledger.csv", ["k", "s", "E", "D", "F", "r"],
               [(r["k"], r["s"], r["E"], r["D"], r["F"], r["r"]) for r in ledger.rows()])
    _write_csv(out / "tube_report.csv", ["s", "c7", "c8", "Au_dev", "Av_dev", "c9", "c10", "c11", "pass"],
               [(t.s, t.c7, t.c8, t.Au_dev, t.Av_dev, t.c9, t.c10, t.c11, t.passed) for t in tubes.reports])
    _write_csv(out / "parity.csv", ["s", "k", "n", "parity", "tol"], parity_rows)
    rep.artifacts += ["balance_ledger.csv", "tube_report.csv", "parity.csv"]

    if len(ledger.s) >= 2:
        ba = diagnostics.balance_audit(ledger)
        rep.sections["balance"] = {"max_abs_residual": ba.max_abs, "energy_monotone": ba.energy_monotone,
                                   "n_samples": ba.n_samples}
        for k, ok in enumerate(ba.energy_monotone):
            rep.check(f"balance.sign[{k}]", "pass" if ok else "warn", note="E~_k nonincreasing where |F~_k| <= D~_k/2")
    worst = tubes.worst()
    rep.sections["tube"] = {"worst": worst, "passed": tubes.passed, "n_audits": len(tubes.reports)}
    rep.bound("tube.main1.c7", worst["c7"], ceil[0])
    rep.bound("tube.main2.c8", worst["c8"], ceil[1])
    rep.bound("tube.Au", worst["Au_dev"], 1.0 / 3.0)
    rep.bound("tube.Av", worst["Av_dev"], plan.M)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        trend = tubes.trend_warnings()
    for msg in trend:
        rep.check("tube.trend", "warn", note=msg)
    for k in range(plan.n_jumps):
        seen = sorted({row[3] for row in parity_rows if row[1] == k})
        rep.check(f"parity[{k}]", "pass" if len(seen) == 1 else "fail", note="parities seen: " + ",".join(seen))
    rep.sections["relax_stop"] = {"converged": cert.converged, "reason": cert.reason, "rhs_norm": cert.rhs_norm}


def run_delta1(cfg, rep, out, opts):
    b = cfg.blocks["delta1"]
    p = cfg.params
    w = b["omega"]
    wt = w if b["omega_tilde"] is None else b["omega_tilde"]
    nb, curve = _heteroclinic_job((p, w, wt, _solver(cfg), 32, 15))
    _heteroclinic_checks(rep, p, curve)
    rng = np.random.default_rng(opts.seed)
    dims = sorted(b["dims"])
    rows = []
    results = []
    for e in b["e"]:
        try:
            sweep = diagnostics.delta1_sweep(p, curve, e, dims, budget=b["budget"])
        except PendrotError as exc:
            rep.check(f"delta1.e={e!r}", "warn", note=f"{type(exc).__name__}: {exc}")
            continue
        best = sweep[-1]
        for _ in range(b["restarts"]):
            init = 1e-2 * rng.standard_normal(dims[-1])
            try:
                alt = diagnostics.estimate_delta1(p, curve, e, dims[-1], budget=b["budget"], initial=init)
            except PendrotError:
                continue
            if alt.value < best.value and alt.constraint_defect <= 1e-6:
                best = alt
        for est in sweep:
            rows.append((e, est.family_dim, est.value, est.constraint_defect, est.envelope_ok))
        results.append({"e": e, "sweep": [s.as_dict() for s in sweep], "best": best.as_dict()})
        rep.bound(f"delta1.defect[e={e!r}]", best.constraint_defect, 1e-6, fail=False)
    rep.sections["delta1"] = results
    _write_csv(out / "delta1.csv", ["e", "family_dim", "delta1_upper", "constraint_defect", "envelope_ok"], rows)
    rep.artifacts.append("delta1.csv")


RUNNERS = {
    "melnikov-scan": run_melnikov_scan,
    "barrier-scan": run_barrier_scan,
    "heteroclinic": run_heteroclinic,
    "shadow-relax": run_shadow_relax,
    "delta1": run_delta1,
}


# ---------------------------------------------------------------- entry points
@dataclass
class RunOptions:
    workers: int = 1
    seed: int = 0
    csv: bool = False
    audit_every: int = 100


def run(cfg: RunConfig, out: Path, options: RunOptions | None = None) -> RunReport:
    """Validate assumptions, run the pipeline and write report.json; errors are captured in the report."""
    opts = options or RunOptions()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(cfg.pipeline, cfg.raw, opts.seed)
    ar = validate_assumptions(cfg.params)
    rep.sections["assumptions"] = ar.as_dict()
    if not ar.passed:
        for c in ar.failures():
            rep.check(c.name, "error", c.value, c.limit, note=c.quantity)
        rep.errors.append({"stage": "validate", "type": "ConfigError", "message": "standing assumptions violated"})
    else:
        t0 = time.perf_counter()
        try:
            RUNNERS[cfg.pipeline](cfg, rep, out, opts)
        except (PendrotError, ArithmeticError, ValueError) as exc:
            log.error("pipeline %s failed: %s", cfg.pipeline, exc)
            rep.errors.append({"stage": cfg.pipeline, "type": type(exc).__name__, "message": str(exc)})
        dump_json({"wall_clock_s": time.perf_counter() - t0}, out / "timing.json")
    dump_json(rep.as_dict(), out / "report.json")
    return rep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pendrot", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default="pendrot_out", help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for independent items")
    ap.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    ap.add_argument("--csv", action="store_true", help="write CSV mirrors of orbit files")
    ap.add_argument("--audit-every", type=int, default=100, help="relaxation steps between audits")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1 or args.audit_every < 1 or not 0 <= args.seed < 2**64:
            raise ConfigError("--workers and --audit-every must be >= 1 and --seed a u64")
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: line {exc.lineno} column {exc.colno}") from exc
        cfg = parse_config(raw, base_dir=path.parent)
    except ConfigError as exc:
        print(f"pendrot: configuration error: {exc}", file=sys.stderr)
        return EXIT["error"]
    rep = run(cfg, Path(args.out), RunOptions(args.workers, args.seed, args.csv, args.audit_every))
    status = rep.status
    print(f"pendrot {cfg.pipeline}: {status} ({len(rep.checks)} checks) -> {args.out}")
    return EXIT[status]


if __name__ == "__main__":
    sys.exit(main())
