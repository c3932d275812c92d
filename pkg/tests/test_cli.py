import csv
import json

import pytest

from ncsym.cli import (EXIT_CAP, EXIT_CERT, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK,
                       EXIT_UNREALIZABLE, load_config, main, parse_seeds)
from ncsym.errors import ConfigError

from helpers import CONFIGS


def run(*argv):
    return main([str(a) for a in argv])


def test_timing_full_resolution_constants(capsys):
    assert run("timing", "--config", CONFIGS / "sigma_a_full.cfg", "--json") == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert (data["n_min"], data["n_max"]) == (1, 3)
    assert data["state_bits"] == 27


def test_check_cert_reports_failure_and_precision(capsys):
    code = run("check-cert", "--config", CONFIGS / "sigma_a_full.cfg", "--seed", 0, "--json")
    data = json.loads(capsys.readouterr().out)
    assert code == EXIT_CERT
    assert not data["passed"]
    assert data["precision_approved"]
    assert data["precision_bound"] == pytest.approx(8.22e-4, rel=0.02)


def test_check_cert_passes_for_plant_b():
    assert run("check-cert", "--config", CONFIGS / "sigma_b.cfg") == EXIT_OK


def test_synthesize_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert run("synthesize", "--config", CONFIGS / "scalar.cfg", "--out", out) == EXIT_OK
    assert "REALIZABLE" in capsys.readouterr().out
    assert (out / "controller.ncsc").is_file()
    assert (out / "controller.txt").read_text().startswith("# controller")
    assert (out / "synthesize.txt").is_file()


def test_unrealizable_exit_code(capsys):
    assert run("synthesize", "--config", CONFIGS / "scalar_impossible.cfg") == EXIT_UNREALIZABLE
    assert "UNREALIZABLE" in capsys.readouterr().out


def test_cap_exit_code():
    assert run("synthesize", "--config", CONFIGS / "scalar.cfg", "--cap", 10) == EXIT_CAP


def test_malformed_config_exit_code(capsys):
    assert run("timing", "--config", CONFIGS / "malformed.cfg") == EXIT_CONFIG
    assert "config error" in capsys.readouterr().out


def test_missing_config_file(tmp_path):
    assert run("timing", "--config", tmp_path / "nope.cfg") == EXIT_CONFIG


def test_precision_gate_without_opt_in(tmp_path):
    text = (CONFIGS / "scalar.cfg").read_text().replace("allow_uncertified = yes\n", "")
    cfg = tmp_path / "s.cfg"
    cfg.write_text(text)
    (tmp_path / "scalar.spec").write_text((CONFIGS / "scalar.spec").read_text())
    assert run("synthesize", "--config", cfg) == EXIT_CERT


def test_infeasible_exit_code(capsys):
    code = run("simulate", "--config", CONFIGS / "two_loop_contention.cfg", "--seeds", "0..0")
    assert code == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().out


def test_simulate_writes_traces_and_index(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--config", CONFIGS / "scalar.cfg", "--seeds", "0..2",
               "--out", out) == EXIT_OK
    rows = list(csv.DictReader(open(out / "index.csv")))
    assert [r["seed"] for r in rows] == ["0", "1", "2"]
    assert all(r["pass"] == "pass" and r["domain_misses"] == "0" for r in rows)
    assert all((out / r["file"]).is_file() for r in rows)


def test_verify_and_abstract(tmp_path, capsys):
    assert run("verify", "--config", CONFIGS / "scalar.cfg") == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert run("abstract", "--config", CONFIGS / "scalar.cfg", "--json") == EXIT_OK
    assert json.loads(capsys.readouterr().out)["states"] > 0


def test_cache_is_reused(tmp_path, capsys):
    cache = tmp_path / "cache"
    args = ("synthesize", "--config", CONFIGS / "scalar.cfg", "--cache", cache, "--json")
    assert run(*args) == EXIT_OK
    first = json.loads(capsys.readouterr().out)
    files = sorted(p.name for p in cache.iterdir())
    assert any(f.startswith("ctrl-") for f in files)
    stamp = {p.name: p.stat().st_mtime_ns for p in cache.iterdir()}
    assert run(*args) == EXIT_OK
    second = json.loads(capsys.readouterr().out)
    assert {p.name: p.stat().st_mtime_ns for p in cache.iterdir()} == stamp
    assert first["stats"] == second["stats"]


def test_parse_seeds():
    assert list(parse_seeds("3..5")) == [3, 4, 5]
    with pytest.raises(ConfigError):
        parse_seeds("5..3")


def test_scenario_config_reuses_loop_configs():
    cfg = load_config(CONFIGS / "two_loop.cfg")
    assert len(cfg.sim.loops) == 2
    assert cfg.sim.shared_channel
    assert cfg.sim.dropout.max_consecutive == 1
