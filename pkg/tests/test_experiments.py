import csv
import json
import os

import pytest

from polyturb import __version__
from polyturb import experiments as ex


def _cfg(kind, tmp_path, **sections):
    data = {"kind": kind, **sections}
    return ex.resolve_config(data, output_dir=str(tmp_path / kind))


SMALL = {
    "n_sweep": {"sweep_values": [4, 8, 16, 32]},
    "spectral_report": {"grid": {"r_max": 10.0, "n": 64},
                        "options": {"consistency_ns": [64, 128, 256, 512]}},
    "transport_check": {"sweep_values": [32], "options": {"turnovers": 1.0}},
    "phase_diagram": {"sweep_values": [1.2, 2.0], "grid": {"r_max": 20.0, "n": 100},
                      "solver": {"t_end": 1.0},
                      "ensemble": {"n_particles": 20000, "n_steps": 5},
                      "options": {"tail_min_samples": 10}},
    "fene_compare": {"ensemble": {"n_particles": 5000, "n_steps": 10}, "options": {"n_bins": 20}},
    "relax": {"grid": {"r_max": 10.0, "n": 80}, "solver": {"dt": 0.05, "t_end": 8.0},
              "options": {"fit_window": [3.0, 7.0]}},
    "tau_sweep": {"sweep_values": [0.01, 0.03, 0.1, 0.3], "grid": {"r_max": 8.0, "n": 21},
                  "solver": {"dt": 0.05, "t_end": 0.5},
                  "options": {"smoke_nx": 4, "smoke_n": 11, "smoke_dt": 0.05}},
}


def test_defaults_cover_every_kind():
    d = ex.load_defaults()
    assert set(d) == set(ex.KINDS)
    for kind in ex.KINDS:
        cfg = ex.resolve_config({"kind": kind})
        assert cfg.kind == kind and cfg.output_dir


@pytest.mark.parametrize("bad", [
    {"kind": "relax", "colour": 1},
    {"kind": "relax", "grid": {"r_max": 10.0, "spacing": 2}},
    {"kind": "relax", "grid": {"n": "many"}},
    {"kind": "relax", "sweep_values": []},
    {"kind": "relax", "sweep_values": [2.0, 1.5]},
    {"kind": "relax", "sweep_values": [-1.0]},
    {"kind": "n_sweep", "sweep_values": [8, 12.5]},
    {"kind": "phase_diagram", "seed": None},
    {"kind": "relax", "seed": -1},
    {"kind": "relax", "workers": 0},
    {"kind": "relax", "params": {"alpha": -1.0}},
    {"kind": "relax", "params": {"d": 4}},
    {"kind": "nonsense"},
    {},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ex.ConfigError):
        ex.resolve_config(bad)


def test_overrides_and_derived_alpha():
    cfg = ex.resolve_config({"kind": "relax"}, ["grid.n=120", "params.tau=0.5",
                                                "options.fit_window=[2, 4]"], seed=3, workers=2)
    assert cfg.grid["n"] == 120 and cfg.params.tau == 0.5 and cfg.options["fit_window"] == [2, 4]
    assert cfg.seed == 3 and cfg.workers == 2
    with pytest.raises(ex.ConfigError):
        ex.resolve_config({"kind": "relax"}, ["grid.bogus=1"])
    with pytest.raises(ex.ConfigError):
        ex.resolve_config({"kind": "relax"}, ["no_equals_sign"])
    fene = ex.resolve_config({"kind": "fene_compare"})
    assert fene.params.alpha == pytest.approx(1.0 / fene.params.c_d, rel=1e-12)
    assert fene.to_dict()["params"]["alpha"] == fene.params.alpha


def test_load_config_errors(tmp_path):
    with pytest.raises(ex.ConfigError):
        ex.load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ex.ConfigError):
        ex.load_config(p)
    p.write_text(json.dumps({"kind": "spectral_report", "grid": {"n": 64}}))
    assert ex.load_config(p).grid == {"r_max": 20.0, "n": 64}


def test_gate_semantics():
    assert ex.gate("a", 1.0, "<", 2.0).passed
    assert not ex.gate("a", float("nan"), "<", 2.0).passed
    assert not ex.gate("a", None, ">=", 0).passed
    assert ex.gate("a", 4.0, "in", [3.5, 4.5]).passed
    assert not ex.gate("a", 5.0, "in", [3.5, 4.5]).passed
    assert ex.gate("a", 1, "==", 1).passed
    with pytest.raises(ValueError):
        ex.gate("a", 1, "~", 1)
    fit = ex.fit_rate([1, 2, 4, 8], [3, 6, 12, 24])
    assert fit.slope == pytest.approx(1.0) and fit.r_squared == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ex.fit_rate([1, 2, 3], [1, 2, 3])


def test_finite_mean_flag():
    assert ex.finite_mean_flag(2.0, 2)[0] and not ex.finite_mean_flag(1.2, 2)[0]
    # 2 pi * integral of v^2 (1+v^2/2)^-2 over (0, inf) = pi^2 sqrt(2)
    assert ex.finite_mean_flag(2.0, 2)[2] == pytest.approx(13.957728399277759, rel=1e-8)
    assert ex.finite_mean_flag(1.2, 2)[2] is None


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_runs_write_summary_and_are_deterministic(kind, tmp_path):
    cfg_a = ex.resolve_config({"kind": kind, **SMALL[kind]}, output_dir=str(tmp_path / "a"))
    cfg_b = ex.resolve_config({"kind": kind, **SMALL[kind]}, output_dir=str(tmp_path / "b"))
    ra = ex.run_experiment(cfg_a)
    rb = ex.run_experiment(cfg_b)
    assert ra.files == rb.files and "summary.json" in ra.files
    for name in ra.files:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        if name == "summary.json":
            ja, jb = json.loads(a), json.loads(b)
            assert ja["config"]["output_dir"] != jb["config"]["output_dir"]
            ja["config"].pop("output_dir")
            jb["config"].pop("output_dir")
            assert ja == jb
        else:
            assert a == b, name
    summ = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summ["version"] == __version__ and summ["kind"] == kind
    assert summ["config"] == cfg_a.to_dict()
    assert summ["passed"] == ra.passed == all(g["passed"] for g in summ["gates"])
    assert ra.gates and all(g.name in ra.report() for g in ra.gates)
    for root, _, files in os.walk(tmp_path):
        for f in files:
            full = os.path.join(root, f)
            assert full.startswith(str(tmp_path / "a")) or full.startswith(str(tmp_path / "b"))


def test_n_sweep_csv_columns(tmp_path):
    res = ex.run_experiment(_cfg("n_sweep", tmp_path, **SMALL["n_sweep"]))
    rows = list(csv.reader(open(tmp_path / "n_sweep" / "n_sweep.csv")))
    assert rows[0] == ["N", "probe_index", "rel_error"]
    assert {int(r[0]) for r in rows[1:]} == {4, 8, 16, 32}
    assert res.fit is not None


def test_worker_count_does_not_change_outputs(tmp_path):
    small = SMALL["phase_diagram"]
    a = ex.resolve_config({"kind": "phase_diagram", **small}, output_dir=str(tmp_path / "w1"))
    b = ex.resolve_config({"kind": "phase_diagram", **small}, output_dir=str(tmp_path / "w2"),
                          workers=2)
    ex.run_experiment(a)
    ex.run_experiment(b)
    for name in ("phase_diagram.csv",):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()
