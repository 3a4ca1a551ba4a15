import json

import pytest

from polyturb import __version__
from polyturb.cli import SUBCOMMANDS, main


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["relax", "--seed", "-3"]) == 1
    assert main(["relax", "--workers", "0"]) == 1
    assert main(["relax", "--config", str(tmp_path / "nope.json")]) == 1
    assert main(["relax", "--config", _write(tmp_path, {"kind": "relax", "extra": 1})]) == 1
    assert main(["relax", "--config", _write(tmp_path, {"kind": "n_sweep"})]) == 1
    assert main(["relax", "--set", "grid.unknown=3"]) == 1
    assert main(["validate-config"]) == 1
    assert "config error" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_validate_config_echoes_resolved(tmp_path, capsys):
    path = _write(tmp_path, {"kind": "relax"})
    assert main(["validate-config", "--config", path, "--set", "grid.n=50", "--seed", "9"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["grid"]["n"] == 50 and out["seed"] == 9 and out["kind"] == "relax"
    assert not (tmp_path / "out").exists()


def test_every_subcommand_is_wired():
    assert set(SUBCOMMANDS) == {"tau-sweep", "n-sweep", "relax", "phase-diagram", "fene",
                                "spectral", "transport-check", "validate-config"}


def test_pass_and_gate_failure_exit_codes(tmp_path, capsys):
    out = tmp_path / "t"
    rc = main(["transport-check", "--out", str(out), "--set", "sweep_values=[128]",
               "--set", "options.turnovers=1.0"])
    text = capsys.readouterr().out
    assert rc == 0 and "overall: PASS" in text
    assert "characteristic_error_n128" in text
    assert (out / "summary.json").exists()
    rc = main(["transport-check", "--out", str(out), "--set", "sweep_values=[32]",
               "--set", "options.turnovers=1.0"])
    assert rc == 2 and "FAIL" in capsys.readouterr().out


def test_stdout_lists_every_gate(tmp_path, capsys):
    out = tmp_path / "n"
    main(["n-sweep", "--out", str(out), "--set", "sweep_values=[4,8,16,32]"])
    text = capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    for g in summary["gates"]:
        assert g["name"] in text
