"""Reproducible experiment drivers with config ingestion and persisted results.

Every driver is a pure function of its :class:`ExperimentConfig`: it writes
CSV tables and a ``summary.json`` (resolved config, version, gates) into
``output_dir`` and returns an :class:`ExperimentResult`.  The config schema
is the defaults file shipped with the package: a key that is not present
in the default config of a kind is rejected.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import copy
import csv
from dataclasses import dataclass, field
from importlib import resources
import json
import math
import os
import warnings

import numpy as np
from scipy import integrate

from . import __version__
from . import kinetic_solver as ks
from . import particles as pt
from . import spectral as sp
from . import transport as tr
from . import turbulence as tb
from .coil_stretch_operator import cell_average, kernel_vector
from .core_types import (CartesianRGrid, ModelParams, RadialGrid, WeightedField,
                         derive_alpha, dimension_constant, sphere_area)

__all__ = [
    "KINDS",
    "ConfigError",
    "NonStationary",
    "ExperimentConfig",
    "Gate",
    "RateFit",
    "ExperimentResult",
    "load_defaults",
    "resolve_config",
    "load_config",
    "fit_rate",
    "tau_sweep_point",
    "run_tau_sweep",
    "run_n_sweep",
    "run_relax",
    "finite_mean_flag",
    "run_phase_diagram",
    "run_fene_compare",
    "run_spectral_report",
    "run_transport_check",
    "run_experiment",
]

KINDS = ("tau_sweep", "n_sweep", "relax", "phase_diagram", "fene_compare",
         "spectral_report", "transport_check")
STOCHASTIC = ("phase_diagram", "fene_compare", "transport_check")
_SECTIONS = ("grid", "solver", "ensemble", "options")


class ConfigError(ValueError):
    """Malformed, incomplete or inconsistent experiment configuration."""


class NonStationary(RuntimeError):
    """Histogram drift between two halves of a run exceeds the Monte Carlo error."""


# ---------------------------------------------------------------- config

def load_defaults():
    """Parsed defaults file: a mapping from kind to a complete config."""
    text = resources.files("polyturb").joinpath("defaults.json").read_text()
    return json.loads(text)


def _type_ok(value, default):
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def _merge(template, data, path):
    out = copy.deepcopy(template)
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in template:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(template[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(template[key], value, where)
        else:
            if value is not None and not _type_ok(value, template[key]):
                raise ConfigError(f"{where!r} has the wrong type ({type(value).__name__})")
            out[key] = value
    return out


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _nest(key, value):
    parts = key.split(".")
    out = value
    for p in reversed(parts):
        out = {p: out}
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment configuration.

    Attributes
    ----------
    kind : str
        One of :data:`KINDS`.
    params : ModelParams
        Model parameters (``alpha`` may be derived when left null).
    sweep_values : tuple of float
        Sorted, positive sweep abscissae.
    grid, solver, ensemble, options : dict
        Kind-specific settings.
    seed : int or None
        Master seed; required for stochastic kinds.
    output_dir : str
    workers : int
    raw : dict
        The resolved config as plain JSON data.
    """

    kind: str
    params: ModelParams
    sweep_values: tuple
    grid: dict
    solver: dict
    ensemble: dict
    options: dict
    seed: int | None
    output_dir: str
    workers: int
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    def to_dict(self):
        return copy.deepcopy(self.raw)


def _validate(data):
    kind = data["kind"]
    vals = data["sweep_values"]
    if not isinstance(vals, list) or not vals:
        raise ConfigError("sweep_values must be a non-empty list")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
        raise ConfigError("sweep_values must be numbers")
    if not all(v > 0 and math.isfinite(v) for v in vals):
        raise ConfigError("sweep_values must be positive and finite")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("sweep_values must be sorted in increasing order without repeats")
    if kind == "n_sweep" and not all(float(v).is_integer() for v in vals):
        raise ConfigError("n_sweep sweep_values must be integers")
    seed = data["seed"]
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)
                             or not 0 <= seed < 2 ** 64):
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if kind in STOCHASTIC and seed is None:
        raise ConfigError(f"kind {kind!r} is stochastic and needs a seed")
    if not isinstance(data["output_dir"], str) or not data["output_dir"]:
        raise ConfigError("output_dir must be a non-empty string")
    workers = data["workers"]
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    p = dict(data["params"])
    try:
        if p.get("alpha") is None:
            p["alpha"] = derive_alpha(p["zeta"], 1.0, p["d"])
        params = ModelParams(d=p["d"], alpha=float(p["alpha"]), zeta=float(p["zeta"]),
                             tau=float(p["tau"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params: {exc}") from exc
    resolved = copy.deepcopy(data)
    resolved["params"]["alpha"] = params.alpha
    grid, solver, ensemble, options = (data.get(k, {}) for k in _SECTIONS)
    return ExperimentConfig(kind, params, tuple(float(v) for v in vals), grid, solver,
                            ensemble, options, seed, data["output_dir"], workers, resolved)


def resolve_config(data, overrides=(), seed=None, output_dir=None, workers=None, defaults=None):
    """Merge ``data`` over the defaults of its kind, apply overrides and validate.

    Parameters
    ----------
    data : dict
        Parsed config; must contain ``kind``.
    overrides : sequence of str
        ``"dotted.key=value"`` strings; values are parsed as JSON when possible.
    seed, output_dir, workers : optional
        Direct overrides, applied last.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    defaults = load_defaults() if defaults is None else defaults
    kind = data.get("kind")
    for text in overrides:
        key, value = _parse_override(text)
        if key == "kind":
            kind = value
    if kind not in KINDS:
        raise ConfigError(f"unknown or missing kind {kind!r}; expected one of {KINDS}")
    template = defaults[kind]
    merged = _merge(template, data, "")
    for text in overrides:
        key, value = _parse_override(text)
        if key == "kind":
            continue
        merged = _merge(template, _deep_update(merged, _nest(key, value)), "")
    if seed is not None:
        merged["seed"] = seed
    if output_dir is not None:
        merged["output_dir"] = output_dir
    if workers is not None:
        merged["workers"] = workers
    merged["kind"] = kind
    return _validate(merged)


def _deep_update(base, patch):
    out = copy.deepcopy(base)
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, overrides=(), **kwargs):
    """Read a JSON config file and resolve it (see :func:`resolve_config`)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return resolve_config(data, overrides, **kwargs)


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class Gate:
    """A pass/fail criterion with its measured value and threshold."""

    name: str
    value: object
    op: str
    threshold: object
    passed: bool

    def describe(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {_fmt(self.value)} {self.op} {_fmt(self.threshold)}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def gate(name, value, op, threshold):
    """Evaluate ``value op threshold``; a missing or NaN value fails."""
    ok = value is not None and not (isinstance(value, float) and math.isnan(value))
    if ok:
        if op == "<":
            ok = value < threshold
        elif op == "<=":
            ok = value <= threshold
        elif op == ">":
            ok = value > threshold
        elif op == ">=":
            ok = value >= threshold
        elif op == "in":
            ok = threshold[0] <= value <= threshold[1]
        elif op == "==":
            ok = value == threshold
        else:
            raise ValueError(f"unknown gate operator {op!r}")
    return Gate(name, value, op, threshold, bool(ok))


@dataclass(frozen=True)
class RateFit:
    """Least-squares log-log fit of ``ys`` against ``xs``."""

    xs: tuple
    ys: tuple
    slope: float
    r_squared: float


def fit_rate(xs, ys):
    """Log-log slope and ``r^2``; needs at least 4 points with positive values."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    if x.size < 4:
        raise ValueError("a rate fit needs at least 4 sweep points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("rate fit needs positive finite values")
    c = np.polyfit(x, y, 1)
    res = y - np.polyval(c, x)
    tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(res ** 2) / tot) if tot > 0 else 1.0
    return RateFit(tuple(float(v) for v in xs), tuple(float(v) for v in ys), float(c[0]),
                   min(max(r2, 0.0), 1.0))


@dataclass
class ExperimentResult:
    """Gates, scalar results and written files of one run."""

    kind: str
    gates: list
    results: dict
    files: list
    config: ExperimentConfig
    fit: RateFit | None = None

    @property
    def passed(self):
        return all(g.passed for g in self.gates)

    def summary(self):
        return {
            "kind": self.kind,
            "version": __version__,
            "config": self.config.to_dict(),
            "gates": [{"name": g.name, "value": g.value, "op": g.op,
                       "threshold": g.threshold, "passed": g.passed} for g in self.gates],
            "passed": self.passed,
            **self.results,
        }

    def report(self):
        lines = [f"{self.kind} (polyturb {__version__}) -> {self.config.output_dir}"]
        lines += ["  " + g.describe() for g in self.gates]
        lines.append(f"  overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


class _Out:
    """Writer confined to ``output_dir``."""

    def __init__(self, output_dir):
        self.root = os.path.abspath(output_dir)
        try:
            os.makedirs(self.root, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output_dir {output_dir}: {exc}") from exc
        if not os.access(self.root, os.W_OK):
            raise ConfigError(f"output_dir {output_dir} is not writable")
        self.files = []

    def path(self, name):
        p = os.path.abspath(os.path.join(self.root, name))
        if os.path.commonpath([p, self.root]) != self.root:
            raise ValueError(f"refusing to write outside output_dir: {name}")
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.files.append(os.path.relpath(p, self.root))
        return p

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def _finish(cfg, out, gates, results, fit=None):
    res = ExperimentResult(cfg.kind, gates, _clean(results), list(out.files), cfg, fit)
    text = json.dumps(_clean(res.summary()), indent=2, sort_keys=True)
    with open(out.path("summary.json"), "w") as fh:
        fh.write(text + "\n")
    res.files = sorted(out.files)
    return res


def _pmap(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _cartesian(grid_cfg):
    return CartesianRGrid(float(grid_cfg["r_max"]), int(grid_cfg["n"]))


def _radial(grid_cfg, d):
    return RadialGrid(float(grid_cfg["r_max"]), int(grid_cfg["n"]), d)


def _solver(cfg, **changes):
    s = dict(cfg.solver)
    s.update(changes)
    return ks.SolverConfig(dt=float(s["dt"]), t_end=float(s["t_end"]), scheme=s["scheme"],
                           stiff=s["stiff"], stiff_solver_tol=float(s["stiff_solver_tol"]))


# ---------------------------------------------------------------- tau sweep

def tau_sweep_point(params, grid, grad_u, solver):
    """Squared ``L^2(0,T; H_alpha)`` distance of the frozen-gradient run to ``rho p_alpha``.

    The x-marginal is constant in the frozen reduction, so the reference
    is the unit-mass discrete equilibrium.  Returns a dict with the error,
    its sup in time and the monitor outcomes.
    """
    op = ks.operator_for(grid, params)
    pk = kernel_vector(op)
    wv = op.volumes * op.weight
    f0 = WeightedField(pk, params.alpha, grid, None, True)

    def observe(t, f):
        return {"e2": float(np.sum(wv * (f.values - f.mass() * pk) ** 2))}

    res = ks.run(f0, solver, params, grad_u=grad_u, observe=observe)
    times = np.asarray(res.ledger.times)
    e2 = np.asarray(res.observables["e2"])
    energy = ks.energy_monitor(res.ledger)
    l1 = ks.l1_positivity_monitor(res.ledger)
    return {"error_sq": float(integrate.trapezoid(e2, times)), "sup_error_sq": float(e2.max()),
            "energy_ok": energy.passed, "l1_ok": l1.passed, "ledger": res.ledger,
            "energy_margin": energy.margin}


def _full_smoke(cfg, grad_u):
    o = cfg.options
    params = cfg.params.replace(tau=float(o["smoke_tau"]))
    grid = CartesianRGrid(float(o["smoke_r_max"]), int(o["smoke_n"]))
    nx = int(o["smoke_nx"])
    dt = float(o["smoke_dt"])
    solver = _solver(cfg, dt=dt)
    amp = float(np.asarray(grad_u)[0, 1])
    u = tr.ShearFlow(amp)
    op = ks.operator_for(grid, params)
    pk = kernel_vector(op)
    wv = op.volumes * op.weight
    rho0 = 1.0 + 0.5 * np.sin(tr.torus_grid(nx)[..., 0]) * np.cos(tr.torus_grid(nx)[..., 1])
    f0 = WeightedField(rho0[..., None] * pk, params.alpha, grid, (nx, nx), True)
    rho_t = {0.0: rho0}

    def observe(t, f):
        key = round(t, 12)
        if key not in rho_t:
            prev = max(k for k in rho_t if k < key)
            rho_t[key] = tr.advect(tr.TorusField(rho_t[prev]), u, key - prev, key - prev).values
        ref = rho_t[key][..., None] * pk
        return {"e2": float(np.mean(np.sum(wv * (f.values - ref) ** 2, axis=-1)))}

    res = ks.run(f0, solver, params, u_L=u, observe=observe)
    full = float(integrate.trapezoid(res.observables["e2"], res.ledger.times))
    reduced = tau_sweep_point(params, grid, grad_u, solver)
    return {"smoke_tau": params.tau, "full_error_sq": full,
            "reduced_error_sq": reduced["error_sq"], "ratio": full / reduced["error_sq"],
            "energy_ok": ks.energy_monitor(res.ledger).passed,
            "l1_ok": ks.l1_positivity_monitor(res.ledger).passed}


def run_tau_sweep(cfg):
    """Singular-limit rate: error^2 against tau for the frozen-gradient reduction.

    Each point is run at ``dt`` and ``dt/2``; if any relative change exceeds
    ``options.dt_halving_tol`` the time stepping is deemed unresolved and
    no fit is reported.
    """
    o = cfg.options
    params = cfg.params
    if not params.alpha > params.d / 2:
        raise ConfigError("the tau sweep needs alpha > d/2")
    grid = _cartesian(cfg.grid)
    grad_u = np.asarray(o["grad_u"], dtype=float)
    dt = float(cfg.solver["dt"])
    coarse, fine = _solver(cfg), _solver(cfg, dt=0.5 * dt)
    taus = list(cfg.sweep_values)

    def point(tau):
        p = params.replace(tau=tau)
        a = tau_sweep_point(p, grid, grad_u, coarse)
        b = tau_sweep_point(p, grid, grad_u, fine)
        return a, b

    pts = _pmap(point, taus, cfg.workers)
    out = _Out(cfg.output_dir)
    rows = []
    for tau, (a, b) in zip(taus, pts):
        rel = abs(a["error_sq"] - b["error_sq"]) / b["error_sq"]
        rows.append((tau, b["error_sq"], a["error_sq"], rel, b["sup_error_sq"]))
        b["ledger"].write_csv(out.path(f"ledgers/energy_tau_{tau:.6g}.csv"))
    out.csv("tau_sweep.csv", ["tau", "error_sq", "error_sq_coarse_dt", "rel_dt_change",
                              "sup_error_sq"], rows)
    worst = max(r[3] for r in rows)
    resolved = worst < float(o["dt_halving_tol"])
    fit = None
    if resolved and len(taus) >= 4:
        fit = fit_rate(taus, [r[1] for r in rows])
    c_cal = rows[-1][1] / taus[-1]
    bound_ratio = max(r[1] / (c_cal * t) for t, r in zip(taus, rows))
    zero = tau_sweep_point(params.replace(tau=taus[0]), grid, np.zeros((2, 2)), fine)
    monitors = all(a["energy_ok"] and b["energy_ok"] and a["l1_ok"] and b["l1_ok"] for a, b in pts)
    gates = [
        gate("dt_halving_rel_change", worst, "<", float(o["dt_halving_tol"])),
        gate("slope", fit.slope if fit else None, "in", list(o["slope_range"])),
        gate("r_squared", fit.r_squared if fit else None, ">", float(o["r_squared_min"])),
        gate("error_sq_over_calibrated_bound", bound_ratio, "<=", 1.0 + 1e-12),
        gate("stationary_error_sq", zero["error_sq"], "<", float(o["stationarity_tol"])),
        gate("monitors_passed", monitors and zero["energy_ok"], "==", True),
    ]
    results = {"slope": fit.slope if fit else None, "r_squared": fit.r_squared if fit else None,
               "fit_refused": not resolved, "calibrated_C": c_cal,
               "sup_slope": fit_rate(taus, [r[4] for r in rows]).slope if len(taus) >= 4 else None,
               "stationary_error_sq": zero["error_sq"]}
    if o["smoke"]:
        sm = _full_smoke(cfg, grad_u)
        f = float(o["smoke_factor"])
        gates.append(gate("full_vs_reduced_ratio", sm["ratio"], "in", [1.0 / f, f]))
        gates.append(gate("full_monitors_passed", sm["energy_ok"] and sm["l1_ok"], "==", True))
        results["smoke"] = sm
    return _finish(cfg, out, gates, results, fit)


# ---------------------------------------------------------------- n sweep

def _probes(cfg):
    pr = cfg.options["probes"]
    d = cfg.params.d
    if pr is None:
        pr = [[1.0, 0.0], [1.0, 1.0]] if d == 2 else [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]
    if any(len(p) != d for p in pr):
        raise ConfigError(f"probes must have {d} components")
    return pr


def run_n_sweep(cfg):
    """Corrector convergence ``A_N -> k_T A_b`` over the band sweep."""
    o = cfg.options
    bands = [int(v) for v in cfg.sweep_values]
    probes = _probes(cfg)
    table = tb.corrector_convergence_sweep(cfg.params.d, bands, probes,
                                           intensity=float(o["intensity"]), workers=cfg.workers)
    out = _Out(cfg.output_dir)
    out.csv("n_sweep.csv", ["N", "probe_index", "rel_error"], table.rows)
    fits = [fit_rate(bands, table.errors(i)) if len(bands) >= 4 else None
            for i in range(len(probes))]
    gates = []
    for i, f in enumerate(fits):
        gates.append(gate(f"rel_error_N{bands[-1]}_probe{i}", float(table.errors(i)[-1]), "<",
                          float(o["err_max"])))
        gates.append(gate(f"slope_probe{i}", f.slope if f else None, "in", list(o["slope_range"])))
    results = {"slopes": [f.slope if f else None for f in fits],
               "r_squared": [f.r_squared if f else None for f in fits],
               "slope": fits[0].slope if fits[0] else None,
               "monotone": table.monotone, "probes": probes,
               "c_d": dimension_constant(cfg.params.d)}
    return _finish(cfg, out, gates, results, fits[0])


# ---------------------------------------------------------------- relaxation

def _gaussian_start(grid, alpha, width=1.0):
    def g(v):
        return np.exp(-0.5 * (v / width) ** 2)

    vals = cell_average(grid, g)
    vals = vals / np.sum(vals * grid.weights)
    return WeightedField(vals, alpha, grid, None, True)


def _relax_one(cfg, alpha):
    o = cfg.options
    params = cfg.params.replace(alpha=alpha)
    grid = _radial(cfg.grid, params.d)
    op = ks.operator_for(grid, params)
    pk = kernel_vector(op)
    wv = op.volumes * op.weight
    f0 = _gaussian_start(grid, alpha, float(o["initial_width"]))
    m0 = f0.mass()

    def observe(t, f):
        return {"distance": float(np.sqrt(np.sum(wv * (f.values - f.mass() * pk) ** 2))),
                "mass": f.mass()}

    solver = _solver(cfg)
    res = ks.run(f0, solver, params, observe=observe)
    t = np.asarray(res.ledger.times)
    dist = np.asarray(res.observables["distance"])
    mass = np.asarray(res.observables["mass"])
    lo, hi = o["fit_window"]
    win = (t >= lo) & (t <= hi)
    rate = -float(np.polyfit(t[win], np.log(dist[win]), 1)[0])
    gap = sp.spectral_gap(op)
    # backward Euler damps the mode e^{-lam t} as (1 + lam dt)^{-t/dt}
    lam = gap * params.relax_rate
    lam_be = math.log1p(lam * solver.dt) / solver.dt if solver.stiff == "backward_euler" else lam
    return {
        "alpha": alpha, "measured_rate": rate, "predicted_rate": lam,
        "scheme_rate": lam_be, "gap": gap, "rel_rate_error": abs(rate - lam) / lam,
        "monotone": bool(np.all(np.diff(dist) <= 1e-14 * dist[0])),
        "mass_drift": float(np.max(np.abs(mass - m0))),
        "energy": ks.energy_monitor(res.ledger), "l1": ks.l1_positivity_monitor(res.ledger),
        "times": t, "distance": dist, "mass": mass, "ledger": res.ledger, "field": res.field,
        "params": params,
    }


def run_relax(cfg):
    """Exponential relaxation of a Gaussian start to ``p_alpha`` for each alpha in the sweep."""
    o = cfg.options
    for a in cfg.sweep_values:
        if not a > cfg.params.d / 2:
            raise ConfigError(f"relaxation needs alpha > d/2, got {a}")
    runs = _pmap(lambda a: _relax_one(cfg, a), list(cfg.sweep_values), cfg.workers)
    out = _Out(cfg.output_dir)
    rows, gates, per = [], [], []
    for r in runs:
        tag = f"{r['alpha']:.6g}"
        rows += [(r["alpha"], t, d, m) for t, d, m in zip(r["times"], r["distance"], r["mass"])]
        r["ledger"].write_csv(out.path(f"energy_alpha_{tag}.csv"))
        ks.write_checkpoint(out.path(f"final_alpha_{tag}.chk"), r["field"], r["times"][-1],
                            r["params"])
        gates += [
            gate(f"rate_rel_error_alpha{tag}", r["rel_rate_error"], "<", float(o["rate_tol"])),
            gate(f"monotone_decay_alpha{tag}", r["monotone"], "==", True),
            gate(f"mass_drift_alpha{tag}", r["mass_drift"], "<", float(o["mass_tol"])),
            gate(f"energy_monitor_alpha{tag}", r["energy"].passed, "==", True),
            gate(f"l1_monitor_alpha{tag}", r["l1"].passed, "==", True),
        ]
        per.append({k: r[k] for k in ("alpha", "measured_rate", "predicted_rate", "scheme_rate",
                                      "gap", "rel_rate_error", "monotone", "mass_drift")})
    out.csv("relax.csv", ["alpha", "t", "distance", "mass"], rows)
    return _finish(cfg, out, gates, {"runs": per})


# ---------------------------------------------------------------- phase diagram

def _mean_integrand(v, alpha, d):
    return v ** d * (1.0 + 0.5 * v * v) ** (-alpha)


def finite_mean_flag(alpha, d, v_far=1e6):
    """Whether ``int |r| p_alpha dr`` converges, decided numerically.

    The far-field slope of the radial integrand ``v^d (1+v^2/2)^(-alpha)`` is
    measured on ``[v_far, 10 v_far]``; the integral converges iff it is
    below -1.  When it does, the value is computed by quadrature.
    """
    a, b = v_far, 10.0 * v_far
    slope = math.log(_mean_integrand(b, alpha, d) / _mean_integrand(a, alpha, d)) / math.log(b / a)
    finite = slope < -1.0 - 1e-9
    value = None
    if finite:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value = sphere_area(d) * integrate.quad(_mean_integrand, 0.0, np.inf,
                                                    args=(alpha, d), limit=500)[0]
    return finite, slope, value


def _regime(normalizable, finite):
    if not normalizable:
        return "measure-valued"
    return "coil" if finite else "stretched"


def _escape(cfg, alpha):
    o = cfg.options
    params = cfg.params.replace(alpha=alpha)
    grid = _radial(cfg.grid, params.d)
    f0 = _gaussian_start(grid, alpha)
    radius = float(o["escape_radius"])

    def observe(t, f):
        return {"inside": ks.mass_escape_diagnostic(f, radius), "mass": f.mass()}

    res = ks.run(f0, _solver(cfg), params, observe=observe)
    t = np.asarray(res.ledger.times)
    inside = np.asarray(res.observables["inside"])
    mass = np.asarray(res.observables["mass"])
    t_end = float(cfg.solver["t_end"])
    win = t >= 0.25 * t_end
    return {"times": t, "inside": inside,
            "decreasing": bool(np.all(np.diff(inside[win]) < 0)),
            "l1_drift": float(np.max(np.abs(mass - mass[0]))),
            "energy_ok": ks.energy_monitor(res.ledger).passed,
            "l1_ok": ks.l1_positivity_monitor(res.ledger).passed}


def _tail(cfg, alpha, seed):
    e = cfg.ensemble
    o = cfg.options
    params = cfg.params.replace(alpha=alpha)
    ens = pt.init_ensemble(params, int(e["n_particles"]), seed)
    ens = pt.simulate(ens, int(e["n_steps"]), float(e["dt"]), kind="limit",
                      workers=cfg.workers)
    try:
        fit = pt.tail_exponent(ens.radii(), tuple(o["tail_range"]),
                               min_samples=int(o["tail_min_samples"]))
    except pt.InsufficientSamples:
        return None
    return fit


def run_phase_diagram(cfg):
    """Regime table over the alpha sweep.

    Normalisable points get a stationary tail fit from the limit SDE
    (started from exact ``p_alpha`` samples); non-normalisable points get
    the mass-escape trend of the kinetic solver.
    """
    o = cfg.options
    d = cfg.params.d
    out = _Out(cfg.output_dir)
    rows, gates, per = [], [], []
    for j, alpha in enumerate(cfg.sweep_values):
        tag = f"{alpha:.6g}"
        normalizable = alpha > d / 2
        finite, far_slope, mean_val = finite_mean_flag(alpha, d)
        entry = {"alpha": alpha, "normalizable": normalizable, "finite_mean": finite,
                 "far_field_slope": far_slope, "mean_radius_integral": mean_val,
                 "regime": _regime(normalizable, finite),
                 "tail_theory": d - 1.0 - 2.0 * alpha}
        if normalizable:
            fit = _tail(cfg, alpha, (cfg.seed + j) % 2 ** 64)
            entry["tail_slope"] = fit.exponent if fit else None
            entry["tail_ci"] = fit.ci_halfwidth if fit else None
            entry["tail_hill"] = fit.hill_exponent if fit else None
            if fit is not None:
                gates.append(gate(f"tail_slope_error_alpha{tag}",
                                  abs(fit.exponent - entry["tail_theory"]), "<=",
                                  float(o["tail_tol"])))
        else:
            esc = _escape(cfg, alpha)
            entry.update({"escape_decreasing": esc["decreasing"], "l1_drift": esc["l1_drift"],
                          "inside_start": float(esc["inside"][0]),
                          "inside_end": float(esc["inside"][-1])})
            out.csv(f"escape_alpha_{tag}.csv", ["t", "fraction_inside"],
                    zip(esc["times"], esc["inside"]))
            gates += [
                gate(f"escape_decreasing_alpha{tag}", esc["decreasing"], "==", True),
                gate(f"l1_drift_alpha{tag}", esc["l1_drift"], "<=", float(o["l1_tol"])),
                gate(f"monitors_alpha{tag}", esc["energy_ok"] and esc["l1_ok"], "==", True),
            ]
        per.append(entry)
        rows.append((alpha, normalizable, finite, entry["regime"], entry.get("tail_slope"),
                     entry["tail_theory"], entry.get("escape_decreasing"), entry.get("l1_drift")))
    out.csv("phase_diagram.csv", ["alpha", "normalizable", "finite_mean", "regime", "tail_slope",
                                  "tail_theory", "escape_decreasing", "l1_drift"], rows)
    return _finish(cfg, out, gates, {"points": per})


# ---------------------------------------------------------------- FENE

def run_fene_compare(cfg):
    """FENE stationary radial law against the closed form.

    ``sweep_values`` are maximal extensions in the dimensional units of the
    spring law; the model variable is ``r = sqrt(C_d) R`` with
    ``b = C_d b_dim``.
    """
    e = cfg.ensemble
    o = cfg.options
    params = cfg.params
    d = params.d
    c_d = params.c_d
    out = _Out(cfg.output_dir)
    gates, per = [], []
    for j, b_dim in enumerate(cfg.sweep_values):
        tag = f"{b_dim:.6g}"
        b = c_d * b_dim
        n_steps = int(e["n_steps"])
        half = n_steps // 2
        ens = pt.init_ensemble(params, int(e["n_particles"]), (cfg.seed + j) % 2 ** 64,
                               b_fene=b)
        ens, snaps = pt.simulate(ens, n_steps, float(e["dt"]), kind="fene",
                                 workers=cfg.workers, snapshots=(half, n_steps))
        edges = np.linspace(0.0, math.sqrt(b), int(o["n_bins"]) + 1)
        hist = pt.radial_histogram(snaps[n_steps], edges)
        hist_half = pt.radial_histogram(snaps[half], edges)
        cdf = lambda v: pt.fene_cdf(v, params.alpha, d, b)
        l1 = pt.histogram_l1(hist, cdf)
        drift = float(np.sum(np.abs(hist.counts - hist_half.counts)) / hist.n_total)
        # two independent multinomial histograms differ by ~sqrt(2 p (1-p)/n) per bin
        p = hist.counts / hist.n_total
        mc = float(np.sum(np.sqrt(2.0 * 2.0 * p * (1.0 - p) / (math.pi * hist.n_total))))
        gamma = params.alpha * b / (2.0 + b)
        radii = snaps[n_steps]
        inside = bool(np.all(radii < math.sqrt(b)))
        pt.write_histogram_csv(out.path(f"fene_hist_b{tag}.csv"), hist)
        pt.write_ensemble(out.path(f"fene_ensemble_b{tag}.bin"), ens,
                          extra={"b_dim": b_dim, "kind": "fene"})
        entry = {"b_dim": b_dim, "b_model": b, "l1": l1, "half_drift": drift,
                 "mc_error": mc, "max_radius_fraction": float(radii.max() / math.sqrt(b)),
                 "gamma_prime": gamma, "intermediate_exponent": d - 1.0 - 2.0 * gamma}
        per.append(entry)
        gates += [
            gate(f"l1_b{tag}", l1, "<", float(o["l1_max"])),
            gate(f"inside_ball_b{tag}", inside, "==", True),
            gate(f"stationarity_drift_b{tag}", drift, "<=", 2.0 * mc),
        ]
        if drift > 2.0 * mc and o["raise_on_drift"]:
            raise NonStationary(f"histogram drift {drift:.3g} exceeds twice the MC error {mc:.3g}")
    return _finish(cfg, out, gates, {"runs": per})


# ---------------------------------------------------------------- spectral

def run_spectral_report(cfg):
    """Kernel consistency, spectral gap and weighted Poincare constants."""
    o = cfg.options
    params = cfg.params
    grid = _radial(cfg.grid, params.d)
    out = _Out(cfg.output_dir)
    gates = []
    ns = [int(n) for n in o["consistency_ns"]]
    if len(ns) < 2:
        raise ConfigError("consistency_ns needs at least two grid sizes")
    residuals = [sp.kernel_residual(ks.operator_for(RadialGrid(grid.r_max, n, params.d), params))
                 for n in ns]
    ratios = [a / b for a, b in zip(residuals, residuals[1:])]
    for n, r in zip(ns[1:], ratios):
        gates.append(gate(f"kernel_residual_ratio_n{n}", r, "in", list(o["ratio_range"])))
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sp.TruncationWarning)
        for sigma in cfg.sweep_values:
            rep = sp.spectral_report(params, grid, sigma=sigma)
            if sigma == cfg.sweep_values[0]:
                rep.to_json(out.path("spectral_report.json"))
                gates.append(gate("near_zero_eigenvalues", rep.grid_meta["near_zero_count"],
                                  "==", 1))
                gates.append(gate("kernel_eigvec_rel_error",
                                  rep.grid_meta["kernel_eigvec_rel_error"], "<",
                                  float(o["eigvec_tol"])))
            ratio = rep.poincare_best / rep.poincare_closed_form
            rows.append((sigma, rep.poincare_best, rep.poincare_closed_form, ratio,
                         rep.grid_meta["optimizer_outer_fraction"]))
            gates.append(gate(f"poincare_ratio_sigma{sigma:.6g}", ratio, "<=",
                              1.0 + float(o["slack"])))
            gap = rep.gap
    out.csv("poincare.csv", ["sigma", "estimate", "closed_form", "ratio", "outer_fraction"], rows)
    results = {"kernel_residuals": dict(zip([str(n) for n in ns], residuals)),
               "residual_ratios": ratios, "gap": gap}
    return _finish(cfg, out, gates, results)


# ---------------------------------------------------------------- transport

def _random_smooth(rng, n, modes):
    x = tr.torus_grid(n)
    out = np.zeros((n, n))
    for k1 in range(-modes, modes + 1):
        for k2 in range(-modes, modes + 1):
            if k1 == 0 and k2 == 0:
                continue
            a, b = rng.standard_normal(2) / (1.0 + k1 * k1 + k2 * k2)
            ph = k1 * x[..., 0] + k2 * x[..., 1]
            out += a * np.cos(ph) + b * np.sin(ph)
    return tr.TorusField(out)


def run_transport_check(cfg):
    """Semi-Lagrangian accuracy against exact characteristics and the L^2 stability check."""
    o = cfg.options
    amp = float(o["amplitude"])
    u = tr.ShearFlow(amp)
    dt = float(o["dt"])
    period = 2.0 * math.pi / abs(amp)
    clip = bool(o["clip"])
    out = _Out(cfg.output_dir)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    gates, per, rows = [], [], []
    for n in cfg.sweep_values:
        n = int(n)

        def rho0(x):
            return np.exp(np.sin(x[..., 0])) * (1.0 + 0.3 * np.cos(x[..., 1]))

        fld = tr.TorusField.from_function(rho0, n)
        end = tr.advect(fld, u, dt, period, clip=clip)
        exact = rho0(u.flow_map(tr.torus_grid(n), -period))
        err = float(np.sqrt(np.mean((end.values - exact) ** 2)) / fld.l2())
        drift = abs(end.l2() - fld.l2()) / fld.l2() / period
        a = _random_smooth(rng, n, int(o["pair_modes"]))
        b = _random_smooth(rng, n, int(o["pair_modes"]))
        stab = tr.stability_check(a, b, u, float(o["turnovers"]) * period, dt=dt, clip=clip,
                                  rtol=float(o["stability_rtol"]))
        rel = np.asarray(stab.distances) / stab.initial_distance
        rows += [(n, t, r) for t, r in zip(stab.times, rel)]
        ks.write_checkpoint(out.path(f"rho_final_n{n}.chk"), end, period)
        per.append({"n": n, "characteristic_error": err, "l2_drift_per_time": drift,
                    "mean_change": abs(end.mean() - fld.mean()),
                    "max_distance_ratio": float(rel.max()),
                    "first_violation_time": stab.first_violation_time})
        gates += [
            gate(f"characteristic_error_n{n}", err, "<", float(o["error_max"])),
            gate(f"l2_drift_per_time_n{n}", drift, "<", float(o["drift_max"])),
            gate(f"distance_nonincreasing_n{n}", float(rel.max()), "<=",
                 1.0 + float(o["stability_rtol"])),
        ]
    out.csv("stability.csv", ["n", "t", "distance_ratio"], rows)
    return _finish(cfg, out, gates, {"runs": per})


_RUNNERS = {
    "tau_sweep": run_tau_sweep,
    "n_sweep": run_n_sweep,
    "relax": run_relax,
    "phase_diagram": run_phase_diagram,
    "fene_compare": run_fene_compare,
    "spectral_report": run_spectral_report,
    "transport_check": run_transport_check,
}


def run_experiment(cfg):
    """Dispatch ``cfg`` to the driver of its kind."""
    return _RUNNERS[cfg.kind](cfg)
