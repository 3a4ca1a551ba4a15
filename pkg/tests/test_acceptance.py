"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or directly as
``python tests/test_acceptance.py``.  Expensive experiment runs are shared
between criteria and executed once per session.
"""

import contextlib
import os
import sys
import tempfile
import time
import warnings

import numpy as np
import pytest

from polyturb import experiments as ex
from polyturb import particles as pt
from polyturb.core_types import ground_state_residual

STOCHASTIC_RUNS = ("phase", "fene", "transport")

# experiment runs by key: (kind, config sections)
RUNS = {
    "n2": ("n_sweep", {}),
    "n3": ("n_sweep", {"params": {"d": 3}, "sweep_values": [4, 8, 16, 32]}),
    "spectral": ("spectral_report", {}),
    "relax": ("relax", {}),
    "tau": ("tau_sweep", {}),
    "transport": ("transport_check", {}),
    "phase": ("phase_diagram", {}),
    "fene": ("fene_compare", {}),
}


@contextlib.contextmanager
def _cwd(path):
    old = os.getcwd()
    os.makedirs(path, exist_ok=True)
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


class Runs:
    """Lazily executed, cached experiment runs under one scratch root."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def execute(self, key, copy="first"):
        kind, sections = RUNS[key]
        cfg = ex.resolve_config({"kind": kind, **sections}, output_dir="out")
        with _cwd(os.path.join(self.root, key, copy)):
            t0 = time.perf_counter()
            res = ex.run_experiment(cfg)
            return res, time.perf_counter() - t0

    def get(self, key):
        if key not in self.cache:
            self.cache[key] = self.execute(key)
        return self.cache[key]

    def files(self, key, copy):
        base = os.path.join(self.root, key, copy, "out")
        out = {}
        for dirpath, _, names in os.walk(base):
            for n in names:
                p = os.path.join(dirpath, n)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, base)] = fh.read()
        return out


def _gate(res, name):
    for g in res.gates:
        if g.name == name:
            return g
    raise KeyError(name)


def _gates(res, prefix):
    return [g for g in res.gates if g.name.startswith(prefix)]


def _fmt(gates):
    return "; ".join(g.describe() for g in gates)


# ---------------------------------------------------------------- criteria

def c1_ground_state(runs):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        d = int(rng.choice([2, 3]))
        b = 2 if d == 2 else 1
        r = rng.uniform(-10.0, 10.0, d)
        alpha = rng.uniform(0.2, 5.0)
        worst = max(worst, float(np.max(np.abs(ground_state_residual(r, alpha, b)))))
    el = time.perf_counter() - t0
    return worst < 1e-12 and el < 1.0, f"max residual {worst:.3g} < 1e-12; {el:.2f}s < 1s"


def c2_corrector(runs):
    r2, e2 = runs.get("n2")
    r3, e3 = runs.get("n3")
    gates = r2.gates + r3.gates
    ok = all(g.passed for g in gates) and e2 + e3 < 120
    return ok, f"d=2: {_fmt(r2.gates)} | d=3 (N<=32): {_fmt(r3.gates)}; {e2 + e3:.1f}s < 120s"


def c3_kernel_spectral(runs):
    res, el = runs.get("spectral")
    gates = (_gates(res, "kernel_residual_ratio") + [_gate(res, "near_zero_eigenvalues"),
                                                      _gate(res, "kernel_eigvec_rel_error")])
    return all(g.passed for g in gates) and el < 60, f"{_fmt(gates)}; {el:.1f}s < 60s"


def c4_poincare(runs):
    res, el = runs.get("spectral")
    gates = _gates(res, "poincare_ratio")
    caveat = ("caveat: estimates are for the truncated domain r_max=20; the sigma=1.5 value "
              "grows with r_max")
    return all(g.passed for g in gates) and el < 120, f"{_fmt(gates)}; {el:.1f}s; {caveat}"


def c5_relaxation(runs):
    res, el = runs.get("relax")
    g = _gates(res, "rate_rel_error")
    return all(x.passed for x in g) and el < 120, f"{_fmt(g)}; {el:.1f}s < 120s"


def c6_singular_limit(runs):
    res, el = runs.get("tau")
    gates = [_gate(res, n) for n in ("dt_halving_rel_change", "slope", "r_squared",
                                     "full_vs_reduced_ratio")]
    return all(g.passed for g in gates) and el < 900, f"{_fmt(gates)}; {el:.1f}s < 900s"


def c7_monitors(runs):
    checks = []
    tau, _ = runs.get("tau")
    checks += [_gate(tau, "monitors_passed"), _gate(tau, "full_monitors_passed")]
    relax, _ = runs.get("relax")
    checks += _gates(relax, "energy_monitor") + _gates(relax, "l1_monitor")
    phase, _ = runs.get("phase")
    checks += _gates(phase, "monitors_alpha")
    bad = [g.name for g in checks if not g.passed]
    return not bad, f"{len(checks)} monitor gates, violations: {bad or 'none'}"


def c8_transport(runs):
    res, el = runs.get("transport")
    gates = [_gate(res, "distance_nonincreasing_n128"), _gate(res, "characteristic_error_n128")]
    return all(g.passed for g in gates) and el < 60, f"{_fmt(gates)}; {el:.1f}s < 60s"


def c9_tail(runs):
    res, el = runs.get("phase")
    g = _gate(res, "tail_slope_error_alpha2")
    rng = np.random.default_rng(9)
    v = pt.sample_radii(rng, 1_000_000, 2.0, 2)
    fit = pt.tail_exponent(v, (10.0, 100.0))
    self_err = abs(fit.exponent + 3.0)
    ok = g.passed and g.threshold == 0.3 and self_err <= 0.15 and el < 300
    return ok, (f"{g.describe()}; sampler self-test |{fit.exponent:.4f} + 3| = {self_err:.4f} "
                f"<= 0.15; phase run {el:.1f}s < 300s")


def c10_fene(runs):
    res, el = runs.get("fene")
    gates = [_gate(res, "l1_b10"), _gate(res, "inside_ball_b10")]
    n = runs.get("fene")[0].config.ensemble["n_particles"]
    ok = all(g.passed for g in gates) and n >= 1_000_000 and el < 300
    return ok, f"{_fmt(gates)}; {n} samples; {el:.1f}s < 300s"


def c11_escape(runs):
    res, el = runs.get("phase")
    gates = [_gate(res, "escape_decreasing_alpha0.8"), _gate(res, "l1_drift_alpha0.8")]
    return all(g.passed for g in gates) and el < 300, f"{_fmt(gates)}; {el:.1f}s < 300s"


def c12_determinism(runs):
    diffs = []
    for key in STOCHASTIC_RUNS:
        runs.get(key)
        runs.execute(key, copy="second")
        a, b = runs.files(key, "first"), runs.files(key, "second")
        if a.keys() != b.keys():
            diffs.append(f"{key}: file sets differ")
        diffs += [f"{key}/{n}" for n in sorted(a) if a.get(n) != b.get(n)]
    return not diffs, f"repeated {', '.join(STOCHASTIC_RUNS)}; differing files: {diffs or 'none'}"


CRITERIA = [
    (1, "ground-state identity", c1_ground_state),
    (2, "corrector limit", c2_corrector),
    (3, "kernel and spectral", c3_kernel_spectral),
    (4, "weighted Poincare", c4_poincare),
    (5, "relaxation rate", c5_relaxation),
    (6, "singular-limit rate", c6_singular_limit),
    (7, "energy and L1 monitors", c7_monitors),
    (8, "transport stability", c8_transport),
    (9, "stationary tail", c9_tail),
    (10, "FENE stationary profile", c10_fene),
    (11, "mass escape below threshold", c11_escape),
    (12, "determinism", c12_determinism),
]


def _line(number, title, ok, detail):
    return f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(str(tmp_path_factory.mktemp("acceptance")))


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"c{n}" for n, _, _ in CRITERIA])
def test_criterion(number, title, check, runs, capsys):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ok, detail = check(runs)
    with capsys.disabled():
        print("\n" + _line(number, title, ok, detail))
    assert ok, detail


def main():
    with tempfile.TemporaryDirectory() as root:
        runs = Runs(root)
        failed = 0
        for number, title, check in CRITERIA:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ok, detail = check(runs)
            failed += not ok
            print(_line(number, title, ok, detail), flush=True)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
