import json
import subprocess
import sys
from pathlib import Path

import pytest

import truncem.em
from truncem import __version__
from truncem.cli import main
from truncem.config import ConfigError, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

HALFLINE = """\
mu: [1.0]
sigma: 1.0
truncation:
  kind: box
  lower: [0.5]
  upper: [inf]
seed: 3
run:
  init: [0.3]
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_writes_trajectory_and_summary(tmp_path, capsys):
    cfg = _write(tmp_path, HALFLINE)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "run.json").read_text())
    assert summary["summary"]["limit_label"] == "PlusMu"
    assert summary["provenance"]["tool_version"] == __version__
    assert len(summary["provenance"]["config_sha256"]) == 64
    head = (out / "trajectory.csv").read_text().splitlines()
    assert head[0].startswith("# truncem") and head[1].startswith("iter,lambda_1")
    assert "PlusMu" in capsys.readouterr().out


def test_run_from_mu_has_zero_iterations(tmp_path):
    cfg = _write(tmp_path, HALFLINE)
    main(["run", "--config", cfg, "--out", str(tmp_path), "--init", "1.0"])
    s = json.loads((tmp_path / "run.json").read_text())["summary"]
    assert s["iterations"] == 0 and s["limit_label"] == "PlusMu"


def test_outputs_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, HALFLINE + "basin:\n  n_inits: 6\n")
    for d in ("a", "b"):
        main(["basin", "--config", cfg, "--out", str(tmp_path / d), "--threads", "2"])
        main(["scan", "--config", cfg, "--out", str(tmp_path / d), "--n", "400"])
    for name in ("basin.json", "scan.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_hash(tmp_path):
    cfg = _write(tmp_path, HALFLINE)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "11"])
    ha = json.loads((tmp_path / "a" / "run.json").read_text())["provenance"]["config_sha256"]
    hb = json.loads((tmp_path / "b" / "run.json").read_text())["provenance"]["config_sha256"]
    assert ha != hb


def test_verify_untruncated_passes(tmp_path, capsys):
    assert main(["verify", "--config", str(CONFIGS / "untruncated_1d.yaml"), "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "verify.json").read_text())
    assert res["all_hard_pass"]
    q = res["soft"]["fkg_quantitative_uniform"]
    assert q["holds_std"] is False and q["holds_folded"] is True
    assert "SOFT" in capsys.readouterr().out


def test_verify_fails_on_hard_violation(tmp_path, monkeypatch):
    import truncem.cli as cli
    monkeypatch.setattr(cli, "fkg_monotone_check", lambda *a, **k: False)
    assert main(["verify", "--config", str(CONFIGS / "untruncated_1d.yaml"), "--out", str(tmp_path)]) == 1


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise truncem.em.SolverError("forced")
    monkeypatch.setattr(truncem.em, "em_step", boom)
    cfg = _write(tmp_path, HALFLINE)
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 3
    s = json.loads((tmp_path / "run.json").read_text())["summary"]
    assert "forced" in s["error"]


@pytest.mark.parametrize("text,key,line", [
    ("mu: [1.0]\nbogus: 1\n", "bogus", 2),
    ("mu: [1.0]\nquad:\n  abs_tl: 1e-9\n", "quad.abs_tl", 3),
    ("mu: [1.0]\nsigma: [[1, 2], [2, 1]]\n", "sigma", 2),
    ("mu: [1.0]\ntruncation:\n  kind: blob\n", "truncation", 2),
])
def test_config_errors_carry_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key and exc.value.line == line


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "mu: [1.0\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_scan_rejects_2d(tmp_path):
    assert main(["scan", "--config", str(CONFIGS / "annulus_2d.yaml"), "--out", str(tmp_path)]) == 2


def test_quad_values_coerced():
    cfg = parse_config("mu: [1.0]\nquad:\n  abs_tol: 1e-13\n  nodes_per_axis: 24\n")
    assert cfg.quad.abs_tol == 1e-13 and cfg.quad.nodes_per_axis == 24


def test_rates_and_field_commands(tmp_path):
    cfg = _write(tmp_path, HALFLINE + "rates:\n  sweep_radii: [3.0, 1.0]\n")
    assert main(["rates", "--config", cfg, "--out", str(tmp_path)]) == 0
    r = json.loads((tmp_path / "rates.json").read_text())
    assert r["bracket_check"] is True and r["local_rate"]["attracting"]
    assert (tmp_path / "rate_sweep.csv").read_text().splitlines()[1] == "label,alpha,radius,fitted_c"
    cfg2 = _write(tmp_path, "mu: [1.0, 0.5]\nfield:\n  counts: [3, 3]\n", "f.yaml")
    assert main(["field", "--config", cfg2, "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "field.csv").read_text().splitlines()) == 11


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "truncem.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
