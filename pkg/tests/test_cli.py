import json
import subprocess
import sys

import numpy as np
import pytest

from pendrot import cli
from pendrot.errors import ConfigError
from pendrot.orbitfile import read_orbit

MEL = {
    "version": 1,
    "pipeline": "melnikov-scan",
    "system": {"epsilon": 0.64, "mu": 0.01},
    "melnikov": {"omega_lo": 0.5, "omega_hi": 1.5, "n_omega": 3, "n_t": 16, "n_v": 16},
}


def _write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_parse_defaults_and_errors():
    cfg = cli.parse_config(MEL)
    assert cfg.pipeline == "melnikov-scan" and cfg.blocks["solver"]["step"] == 0.01
    with pytest.raises(ConfigError, match="unknown"):
        cli.parse_config({**MEL, "system": {**MEL["system"], "foo": 1}})
    with pytest.raises(ConfigError, match="unknown top-level"):
        cli.parse_config({**MEL, "extra": {}})
    with pytest.raises(ConfigError, match="version"):
        cli.parse_config({**MEL, "version": 2})
    with pytest.raises(ConfigError):
        cli.parse_config({**MEL, "system": {"epsilon": -1.0, "mu": 0.01}})
    with pytest.raises(ConfigError, match="needs"):
        cli.parse_config({k: v for k, v in MEL.items() if k != "melnikov"})
    with pytest.raises(ConfigError, match="omega_lo"):
        cli.parse_config({**MEL, "melnikov": {"omega_lo": 2.0, "omega_hi": 1.0}})


def test_report_margins_and_rollup():
    r = cli.RunReport("x", {}, 0)
    r.bound("a", 1.0, 2.0)
    r.bound("b", 3.0, 2.0, upper=False)
    assert [c["margin"] for c in r.checks] == [1.0, 1.0] and r.status == "pass"
    r.bound("c", 3.0, 2.0, fail=False)
    assert r.status == "warn"
    r.bound("d", 3.0, 2.0)
    assert r.status == "fail"
    r.errors.append({"stage": "x"})
    assert r.status == "error"


def test_melnikov_scan_run_and_determinism(tmp_path):
    path = _write(tmp_path, MEL)
    outs = []
    for workers in (1, 2):
        out = tmp_path / f"o{workers}"
        code = cli.main(["--config", str(path), "--out", str(out), "--workers", str(workers)])
        assert code == 0
        outs.append(out)
    a, b = ((o / "report.json").read_bytes() for o in outs)
    assert a == b
    rep = json.loads(a)
    assert rep["status"] == "pass" and (outs[0] / "timing.json").is_file()
    assert sorted(p.name for p in outs[0].glob("melnikov_field_*.csv")) == [f"melnikov_field_00{i}.csv" for i in range(3)]


def test_invalid_assumptions_exit_3(tmp_path):
    cfg = {**MEL, "system": {"epsilon": 0.1, "mu": 0.01}}
    out = tmp_path / "o"
    assert cli.main(["--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "error" and rep["errors"][0]["stage"] == "validate"
    assert not (out / "timing.json").exists()


def test_config_errors_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["--config", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["--config", str(tmp_path / "missing.json")]) == 3
    unk = _write(tmp_path, {**MEL, "melnikov": {**MEL["melnikov"], "zzz": 1}}, "u.json")
    assert cli.main(["--config", str(unk)]) == 3
    assert "configuration error" in capsys.readouterr().err


def test_heteroclinic_pipeline_writes_orbit(tmp_path):
    cfg = {"version": 1, "pipeline": "heteroclinic", "system": {"epsilon": 0.64, "mu": 0.01},
           "heteroclinic": {"omega": 1.0}}
    out = tmp_path / "o"
    assert cli.main(["--config", str(_write(tmp_path, cfg)), "--out", str(out), "--csv"]) == 0
    q, header = read_orbit(out / "heteroclinic.bin")
    assert q.n > 100 and np.all(np.isfinite(q.u))
    assert (out / "heteroclinic.csv").is_file()


def test_shadow_relax_short_run(tmp_path):
    cfg = {"version": 1, "pipeline": "shadow-relax", "system": {"epsilon": 0.64, "mu": 0.01},
           "shadow": {"omegas": [1.0, 1.0, 1.0], "L": 4 * np.pi, "dt": 0.05, "ds": 0.2, "s_max": 4,
                      "checkpoint_every": 10}}
    out = tmp_path / "o"
    code = cli.main(["--config", str(_write(tmp_path, cfg)), "--out", str(out), "--audit-every", "5"])
    rep = json.loads((out / "report.json").read_text())
    assert code == cli.EXIT[rep["status"]] and rep["status"] in ("pass", "warn")
    ids = {c["id"]: c["status"] for c in rep["checks"]}
    assert ids["parity[0]"] == "pass" and ids["parity[1]"] == "pass"
    assert ids["tube.main1.c7"] == "pass" and ids["tube.main2.c8"] == "pass"
    for name in ("balance_ledger.csv", "tube_report.csv", "parity.csv", "orbit_s0.bin", "orbit_final.bin"):
        assert (out / name).is_file()
    q, header = read_orbit(out / "orbit_final.bin")
    assert header["s"] == pytest.approx(4.0) and header["plan_hash"] == rep["sections"]["plan_hash"]


def test_console_entry_point(tmp_path):
    path = _write(tmp_path, MEL)
    r = subprocess.run([sys.executable, "-m", "pendrot.cli", "--config", str(path), "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "melnikov-scan: pass" in r.stdout
