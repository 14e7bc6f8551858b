"""Acceptance criteria 1-12.  Each test prints one PASS/FAIL line, then asserts.

Run ``pytest tests/test_acceptance.py -v`` (the lines appear uncaptured).
"""

import csv
import json
import math

import numpy as np
import pytest

from pendrot import barrier as B
from pendrot import cli
from pendrot import diagnostics as Dg
from pendrot import gradientflow as G
from pendrot import melnikov as Mk
from pendrot.model import CouplingFunction, SystemParams
from pendrot.separatrix import build_supersub, separatrix_curve, separatrix_u, verify_stationary_supersolution
from pendrot.shadowing import build_q0, uniform_plan
from pendrot.trajectory import BoundaryCondition, Trajectory

ARNOLD = CouplingFunction.arnold()


@pytest.fixture
def emit(capsys):
    def _emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)

    return _emit


# ---------------------------------------------------------------- 1, 2
def test_c01_peierls_bracket(emit):
    grid = np.linspace(0, 2 * np.pi, 5, endpoint=False)
    worst = math.inf
    count = 0
    for eps in (0.25, 0.64, 1.0):
        mu = eps / 16
        p = SystemParams(eps, mu, ARNOLD)
        lo, hi = 4 * math.sqrt(eps * (1 - mu)) - 1e-3, 4 * math.sqrt(eps * (1 + mu)) + 1e-3
        for omega in (0.5, 1.0, 1.5):
            for t0 in grid:
                for v0 in grid:
                    sm, sp, _ = B.peierls(p, omega, t0, v0)
                    for s in (sm, sp):
                        worst = min(worst, s - lo, hi - s)
                        count += 1
    ok = worst >= 0
    emit(1, ok, f"{count} one-sided actions, smallest margin to the widened bracket {worst:.3e}")
    assert ok


def test_c02_mu_zero_exactness(emit):
    worst_s = worst_u = 0.0
    for eps in (0.25, 0.64, 1.0):
        p = SystemParams(eps, 0.0)
        for t0, v0 in ((0.0, 0.0), (1.3, 2.1)):
            for side in ("left", "right"):
                c = B.one_sided_minimizer(p, 1.0, t0, v0, side)
                tr = c.trajectory
                worst_s = max(worst_s, abs(c.action - 4 * math.sqrt(eps)))
                worst_u = max(worst_u, float(np.max(np.abs(tr.u - separatrix_u(eps, tr.t - t0)))))
    ok = worst_s <= 1e-4 and worst_u <= 1e-3
    emit(2, ok, f"max |S - 4 sqrt(eps)| = {worst_s:.3e} (<= 1e-4), sup |u - separatrix| = {worst_u:.3e} (<= 1e-3)")
    assert ok


# ---------------------------------------------------------------- 3, 4
def test_c03_melnikov_oracle(emit):
    rng = np.random.default_rng(20240607)
    p = SystemParams(0.64, 0.01, ARNOLD)
    worst = 0.0
    for _ in range(20):
        w, t0, v0 = rng.uniform(-2, 2), rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
        worst = max(worst, abs(Mk.melnikov_primitive(p, w, t0, v0) - Mk.melnikov_oracle(p, w, t0, v0)))
    worst_c = 0.0
    for eps, c in ((0.25, 0.7), (0.64, -1.3), (1.0, 2.0)):
        pc = SystemParams(eps, 0.01, CouplingFunction.constant(c))
        for w, t0, v0 in ((1.0, 0.0, 0.0), (-0.4, 2.0, 5.0)):
            worst_c = max(worst_c, abs(Mk.melnikov_primitive(pc, w, t0, v0) + 4 * math.sqrt(eps) * c))
    ok = worst <= 1e-8 and worst_c <= 1e-10
    emit(3, ok, f"20 random points max |M - oracle| = {worst:.3e} (<= 1e-8), constant f max error {worst_c:.3e} (<= 1e-10)")
    assert ok


def test_c04_melnikov_error_slope(emit):
    p = SystemParams(0.64, 0.0, ARNOLD)
    mus = [1e-3, 2e-3, 4e-3, 8e-3]
    st = B.melnikov_error_study(p, 1.0, mus)
    generic = B.melnikov_error_study(p, 1.0, mus, pairs=[((0.4, 1.1), (2.3, 4.0)), ((1.0, 0.5), (5.0, 2.5))])
    ok = 1.3 <= st.slope <= 1.7
    emit(4, ok, f"log-log slope {st.slope:.3f} (band [1.3, 1.7]); errors {np.round(st.errors[:, 0], 14).tolist()}; "
                f"slopes at generic pairs {[round(s, 3) for s in generic.slopes]}")
    assert ok


# ---------------------------------------------------------------- 5, 6 (one-jump relaxations)
def _one_jump_q(p, h, dt):
    plan = uniform_plan(p, [1.0, 1.0], 4 * np.pi)
    seed = build_q0(p, plan, [h], dt=dt)
    q = seed.trajectory
    t = q.t
    # the same smooth perturbation at every resolution, so the runs differ only by discretization
    q = q.replace(u=q.u + 0.05 * np.exp(-(t - 1) ** 2), v=q.v + 0.05 * np.exp(-(t + 1) ** 2))
    return seed, q


def test_c05_action_balance_refinement(emit, arnold_064, heteroclinic_064):
    _, h = heteroclinic_064
    p = arnold_064
    res = []
    for dt, ds in ((0.05, 0.2), (0.025, 0.1), (0.0125, 0.05)):
        seed, q = _one_jump_q(p, h, dt)
        led = Dg.BalanceLedger(p, seed.plan, [0])
        st = G.Stepper(p)
        state = G.FlowState(q)
        led.record(0.0, state.q)
        for _ in range(int(round(20.0 / ds))):
            state = st.step(state, ds)
            led.record(state.s, state.q)
        res.append(Dg.balance_audit(led).worst)
    ratios = [res[i] / res[i + 1] for i in range(len(res) - 1)]
    ok = all(r >= 3.5 for r in ratios)
    orders = [math.log2(r) for r in ratios]
    emit(5, ok, f"max|r| = {[f'{r:.3e}' for r in res]}, halving ratios {[round(r, 3) for r in ratios]} (>= 3.5), "
                f"orders {[round(o, 3) for o in orders]}")
    assert ok


def test_c06_gronwall(emit, arnold_064, heteroclinic_064):
    _, h = heteroclinic_064
    p = arnold_064
    seed, q = _one_jump_q(p, h, 0.05)
    centre = float(seed.plan.T_tilde[0])
    ds, s_end = 0.2, 150.0
    deltas = (0.1, 0.5)
    st = G.Stepper(p)
    state = G.FlowState(q)
    E = {d: [G.weighted_action(p, state.q, d, centre)] for d in deltas}
    for _ in range(int(round(s_end / ds))):
        state = st.step(state, ds)
        for d in deltas:
            E[d].append(G.weighted_action(p, state.q, d, centre))
    worst = -math.inf
    n_pairs = 0
    for d in deltas:
        e = np.array(E[d])
        lag = int(round(1.0 / (d * d) / ds))
        excess = math.exp(-1.0) * e[lag:] - e[:-lag] - 1e-8
        worst = max(worst, float(excess.max()))
        n_pairs += excess.size
    ok = worst <= 0
    emit(6, ok, f"{n_pairs} pairs (s0, s0 + 1/delta^2), delta in {deltas}; max of e^-1 E(s0+1/delta^2) - E(s0) - 1e-8 = {worst:.3e}")
    assert ok


# ---------------------------------------------------------------- 7, 8
def test_c07_supersolution_margins(emit):
    parts = []
    ok = True
    for eps, mu in ((1.0, 1 / 16), (0.64, 0.01), (0.25, 0.01)):
        p = SystemParams(eps, mu, ARNOLD)
        for c in build_supersub(p):
            rep = verify_stationary_supersolution(p, c, grid_n=100_000)
            ok &= rep.passed and rep.min_margin > 0
            parts.append(f"{c.kind}({eps},{mu:.4g})={rep.min_margin:.3e}")
    p0 = SystemParams(0.64, 0.0)
    r0 = verify_stationary_supersolution(p0, separatrix_curve(0.64), grid_n=100_000)
    m0 = max(abs(r0.min_margin), abs(r0.max_margin))
    ok &= m0 <= 1e-9
    emit(7, ok, "min margins " + ", ".join(parts) + f"; mu=0 |margin| = {m0:.3e} (<= 1e-9)")
    assert ok


def test_c08_maximum_principle(emit):
    eps, mu = 0.64, 0.01
    p = SystemParams(eps, mu, ARNOLD)
    zm, _ = build_supersub(p)
    se = math.sqrt(eps)
    dt = 0.05
    t_lo = -20.0 / se
    n = int(math.floor((0.75 / se - t_lo) / dt)) + 1
    t = t_lo + dt * np.arange(n)
    z = zm(t)
    u0 = z - 0.3 * np.exp(-t * t) - 1e-3 * np.exp(0.1 * (t - t[-1]))
    bc = BoundaryCondition("clamped", 0, 1.0)
    q = Trajectory(t_lo, dt, u0, 1.0 * t, bc, bc)
    st = G.Stepper(p)
    state = G.FlowState(q)
    worst = float(np.max(state.q.u - z))
    for _ in range(2000):
        state = st.step(state, 0.1)
        worst = max(worst, float(np.max(state.q.u - z)))
    moved = float(np.max(np.abs(state.q.u - u0)))
    ok = worst <= 1e-6
    emit(8, ok, f"max over s in [0, {state.s:.0f}] of max_t (u - z_minus) = {worst:.3e} (<= 1e-6); u moved by {moved:.3e}")
    assert ok


# ---------------------------------------------------------------- 9-12 (CLI runs)
def _shadow_cfg(shadow: dict) -> dict:
    return {"version": 1, "pipeline": "shadow-relax", "system": {"epsilon": 0.64, "mu": 0.01}, "shadow": shadow}


def _run(cfg, out, audit_every=100):
    rc = cli.parse_config(cfg)
    rep = cli.run(rc, out, cli.RunOptions(audit_every=audit_every))
    return rep.as_dict()


def test_c09_parity_conservation(emit, tmp_path):
    cfg = _shadow_cfg({"omegas": [1.0, 1.0, 1.0], "L": 4 * np.pi, "dt": 0.05, "ds": 0.2,
                       "s_max": 2000.0, "min_s": 2000.0})
    rep = _run(cfg, tmp_path / "o")
    with open(tmp_path / "o" / "parity.csv") as fh:
        rows = list(csv.DictReader(fh))
    per = {}
    for r in rows:
        per.setdefault(int(r["k"]), []).append(r["parity"])
    n_audits = min(len(v) for v in per.values())
    seen = {k: sorted(set(v)) for k, v in per.items()}
    ok = len(per) == 2 and n_audits >= 100 and all(len(v) == 1 for v in seen.values())
    emit(9, ok, f"{n_audits} audits per jump, parities seen {seen}, run status {rep['status']}")
    assert ok


def test_c10_heteroclinic_certificate(emit, arnold_064, heteroclinic_064):
    _, h = heteroclinic_064
    se = arnold_064.sqrt_eps
    info = h.info
    rate = min(info["decay_rate_left"], info["decay_rate_right"])
    ok = info["el_residual"] <= 1e-3 and info["c1_defect"] <= 1e-3 and rate >= 0.9 * se / 2
    emit(10, ok, f"EL residual {info['el_residual']:.3e}, C1 defect {info['c1_defect']:.3e} (<= 1e-3), "
                 f"u-decay rate {rate:.4f} (>= {0.9 * se / 2:.4f})")
    assert ok


def test_c11_tube_maintenance(emit, tmp_path):
    p = SystemParams(0.64, 0.01, ARNOLD)
    s1 = B.check_S1(p, 1.0, 1.0, 1, 16, 16)
    from pendrot.shadowing import JumpPlan, step_bound

    b = step_bound(JumpPlan.create(p, [1.0, 1.0], 4 * np.pi, [0.0], s1=s1))
    # omega_hi inside (2b, 3b] so the policy ramp has three jumps
    cfg = _shadow_cfg({"ramp": {"omega_lo": 1.0, "omega_hi": 1.0 + 2.5 * b}, "L": 4 * np.pi, "dt": 0.05,
                       "ds": 0.2, "s_max": 1000.0, "min_s": 1000.0, "s1": {"n_t": 16, "n_v": 16}})
    rep = _run(cfg, tmp_path / "o")
    with open(tmp_path / "o" / "tube_report.csv") as fh:
        rows = list(csv.DictReader(fh))
    c7 = max(float(r["c7"]) for r in rows)
    c8 = max(float(r["c8"]) for r in rows)
    s_last = max(float(r["s"]) for r in rows)
    K = len(rep["sections"]["plan"]["Ltilde"])
    ok = K == 3 and c7 <= 20 and c8 <= 4 and s_last >= 1000 - 1e-9
    emit(11, ok, f"{K} jumps, omegas {rep['sections']['plan']['omegas']}, {len(rows)} audits over s in [0, {s_last:.0f}], "
                 f"max c7 = {c7:.4f} (<= 20), max c8 = {c8:.3e} (<= 4)")
    assert ok


def test_c12_determinism(emit, tmp_path):
    cfg = _shadow_cfg({"omegas": [1.0, 1.0, 1.0], "L": 4 * np.pi, "dt": 0.05, "ds": 0.2, "s_max": 4.0,
                       "checkpoint_every": 10})
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        _run(cfg, o, audit_every=5)
    files = sorted(f.name for f in outs[0].iterdir() if f.name != "timing.json")
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    n_bin = sum(f.endswith(".bin") for f in files)
    ok = all(same) and "report.json" in files and n_bin >= 2
    emit(12, ok, f"{len(files)} files compared ({n_bin} orbit files), identical: {sum(same)}/{len(files)}")
    assert ok
    json.loads((outs[0] / "report.json").read_text())
