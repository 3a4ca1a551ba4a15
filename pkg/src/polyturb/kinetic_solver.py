"""Time integration of the limit kinetic equation with a-priori monitors.

Three modes share one stiff core: the coil-stretch operator times
``1/(zeta alpha tau)`` is always treated implicitly.  Stretching by a
frozen gradient is explicit conservative upwind inside a Strang split, or
folded into a single implicit M-matrix system with ``scheme="implicit"``.
The full mode adds semi-Lagrangian x-transport on the torus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import math
import threading

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from . import transport
from .coil_stretch_operator import (
    assemble_cartesian,
    assemble_radial,
    gradient_energy_matrix,
    stretching_matrix,
)
from .core_types import CartesianRGrid, RadialGrid, WeightedField, grid_from_meta

__all__ = [
    "LinearSolveError",
    "CFLViolation",
    "MonitorViolation",
    "SolverConfig",
    "EnergyLedger",
    "MonitorReport",
    "RunResult",
    "operator_for",
    "step_radial",
    "step_frozen_gradient",
    "step_full",
    "run",
    "energy_monitor",
    "l1_positivity_monitor",
    "mass_escape_diagnostic",
    "x_marginal",
    "write_checkpoint",
    "read_checkpoint",
]

EPS_MON = 1e-6
CFL_MAX = 0.9
_SCHEMES = ("strang", "lie", "implicit")
_STIFF = ("backward_euler", "crank_nicolson")
_FLAGS = ("energy", "gradient", "l1")


class LinearSolveError(RuntimeError):
    """Sparse factorisation or back-substitution failed its residual check."""


class CFLViolation(ValueError):
    """Explicit stretching step would exceed the CFL limit."""


class MonitorViolation(AssertionError):
    """An a-priori estimate was violated."""


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping controls.

    Attributes
    ----------
    dt, t_end : float
        Step and horizon; ``t_end >= dt``.
    scheme : str
        ``"strang"`` (default), ``"lie"`` or ``"implicit"`` for the stretching split.
    stiff : str
        ``"backward_euler"`` (positivity preserving) or ``"crank_nicolson"``.
    stiff_solver_tol : float
        Relative residual accepted from each linear solve, in ``(0, 1e-4]``.
    monitor_flags : tuple of str
        Subset of ``("energy", "gradient", "l1")`` recorded by :func:`run`.
    enforce_cfl : bool
        Refuse explicit stretching steps above the CFL limit.
    """

    dt: float
    t_end: float
    scheme: str = "strang"
    stiff: str = "backward_euler"
    stiff_solver_tol: float = 1e-10
    monitor_flags: tuple = _FLAGS
    enforce_cfl: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= self.dt * (1 - 1e-12):
            raise ValueError("t_end must be at least dt")
        if not 0 < self.stiff_solver_tol <= 1e-4:
            raise ValueError("stiff_solver_tol must lie in (0, 1e-4]")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}")
        if self.stiff not in _STIFF:
            raise ValueError(f"stiff must be one of {_STIFF}")
        flags = tuple(self.monitor_flags)
        bad = [f for f in flags if f not in _FLAGS]
        if bad:
            raise ValueError(f"unknown monitor flags {bad}")
        object.__setattr__(self, "monitor_flags", flags)

    @property
    def n_steps(self):
        return int(math.ceil(self.t_end / self.dt - 1e-9))


# ---------------------------------------------------------------- operators

_CACHE = {}
_CACHE_LIMIT = 64
_LOCK = threading.RLock()


def _cached(key, build):
    with _LOCK:
        if key in _CACHE:
            return _CACHE[key]
    value = build()
    with _LOCK:
        if key not in _CACHE:
            if len(_CACHE) >= _CACHE_LIMIT:
                _CACHE.pop(next(iter(_CACHE)))
            _CACHE[key] = value
        return _CACHE[key]


def operator_for(grid, params):
    """Assembled operator for ``grid`` (cached)."""
    def build():
        if isinstance(grid, RadialGrid):
            return assemble_radial(grid, params)
        return assemble_cartesian(grid, params)
    return _cached(("op", grid, params.alpha, params.b, params.d), build)


class _Factor:
    """LU of a sparse system with a residual check."""

    def __init__(self, a, rhs_op, tol):
        self.a = sparse.csc_matrix(a)
        self.rhs_op = rhs_op
        self.tol = tol
        try:
            self.lu = spla.splu(self.a)
        except RuntimeError as exc:
            raise LinearSolveError(f"factorisation failed: {exc}") from exc

    def solve(self, b):
        rhs = b if self.rhs_op is None else self.rhs_op @ b
        x = self.lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("non-finite solution")
        res = np.linalg.norm(self.a @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if res > self.tol:
            raise LinearSolveError(f"relative residual {res:.2e} above tolerance {self.tol:.1e}")
        return x


def _stiff_factor(op, params, dt, cfg, extra=None, key=None):
    """Factor of ``I - dt A`` (or its Crank-Nicolson pair) with ``A = rate L (+ extra)``."""
    def build():
        a = params.relax_rate * op.entries
        if extra is not None:
            a = a + extra
        eye = sparse.identity(op.grid.n, format="csr")
        if cfg.stiff == "crank_nicolson":
            return _Factor(eye - 0.5 * dt * a, sparse.csr_matrix(eye + 0.5 * dt * a), cfg.stiff_solver_tol)
        return _Factor(eye - dt * a, None, cfg.stiff_solver_tol)
    k = ("lu", op.grid, params, round(dt, 15), cfg.stiff, cfg.stiff_solver_tol, key)
    return _cached(k, build)


def _check_grad(grad_u, d):
    m = np.asarray(grad_u, dtype=float)
    if m.shape != (d, d):
        raise ValueError(f"grad_u must be {d}x{d}")
    if abs(np.trace(m)) > 1e-12 * max(1.0, np.abs(m).max()):
        raise ValueError(f"grad_u must be trace-free (trace = {np.trace(m):.3e})")
    return m


def _cfl_number(grid, m, dt):
    return dt * np.linalg.norm(m, 2) * grid.r_max / grid.h


def _wrap(f, values):
    v = np.asarray(values)
    nonneg = bool(f.nonnegative and (v.size == 0 or v.min() >= -1e-12 * max(v.max(), 0.0)))
    return WeightedField(v, f.alpha, f.grid, f.x_shape, nonneg)


def _check_alpha(f, params):
    if abs(f.alpha - params.alpha) > 1e-14 * max(1.0, params.alpha):
        raise ValueError("field weight exponent differs from params.alpha")


# ---------------------------------------------------------------- steppers

def _stiff_apply(f_vals, op, params, dt, cfg):
    fac = _stiff_factor(op, params, dt, cfg)
    v = f_vals.reshape(-1, op.grid.n).T
    return fac.solve(v).T.reshape(f_vals.shape)


def step_radial(f, cfg, params, dt=None):
    """One implicit step of ``(1/(zeta alpha tau)) L`` (no transport, no stretching).

    Works on any r-grid; values with an x-grid are stepped cell by cell.
    """
    _check_alpha(f, params)
    dt = cfg.dt if dt is None else dt
    op = operator_for(f.grid, params)
    return _wrap(f, _stiff_apply(f.values, op, params, dt, cfg))


def _explicit_stretch(vals, u, dt):
    v = vals.reshape(-1, u.shape[0]).T
    return (v - dt * (u @ v)).T.reshape(vals.shape)


def _stretch_matrix(grid, m):
    return _cached(("U", grid, m.tobytes()), lambda: stretching_matrix(grid, m))


def step_frozen_gradient(f, grad_u, cfg, params, dt=None):
    """One step with the stretching ``div_r(M r f)`` for a constant trace-free ``M``.

    Raises
    ------
    CFLViolation
        If ``dt |M| r_max / h > 0.9`` for an explicit scheme and ``enforce_cfl``.
    ValueError
        If ``M`` is not trace-free or the grid is not Cartesian.
    """
    _check_alpha(f, params)
    if not isinstance(f.grid, CartesianRGrid):
        raise TypeError("step_frozen_gradient needs a CartesianRGrid")
    dt = cfg.dt if dt is None else dt
    m = _check_grad(grad_u, f.grid.d)
    op = operator_for(f.grid, params)
    if not np.any(m):
        return step_radial(f, cfg, params, dt)
    u = _stretch_matrix(f.grid, m)
    if cfg.scheme == "implicit":
        fac = _stiff_factor(op, params, dt, cfg, extra=-u, key=m.tobytes())
        v = f.values.reshape(-1, op.grid.n).T
        return _wrap(f, fac.solve(v).T.reshape(f.values.shape))
    if cfg.enforce_cfl:
        cfl = _cfl_number(f.grid, m, dt)
        if cfl > CFL_MAX:
            raise CFLViolation(f"CFL number {cfl:.3f} exceeds {CFL_MAX}")
    if cfg.scheme == "strang":
        v = _explicit_stretch(f.values, u, 0.5 * dt)
        v = _stiff_apply(v, op, params, dt, cfg)
        v = _explicit_stretch(v, u, 0.5 * dt)
    else:
        v = _explicit_stretch(f.values, u, dt)
        v = _stiff_apply(v, op, params, dt, cfg)
    return _wrap(f, v)


def _local_stretch(vals, grid, grads, dt, cfg, op, params):
    """Apply per-x-cell stretching (explicit) to values of shape (n1, n2, n_r)."""
    out = np.empty_like(vals)
    flat = vals.reshape(-1, grid.n)
    g = grads.reshape(-1, 2, 2)
    res = out.reshape(-1, grid.n)
    keys = {}
    for i in range(len(g)):
        keys.setdefault(g[i].tobytes(), []).append(i)
    for kb, idx in keys.items():
        m = np.frombuffer(kb).reshape(2, 2)
        if not np.any(m):
            res[idx] = flat[idx]
            continue
        if cfg.enforce_cfl and _cfl_number(grid, m, dt) > CFL_MAX:
            raise CFLViolation(f"CFL number {_cfl_number(grid, m, dt):.3f} exceeds {CFL_MAX}")
        u = _stretch_matrix(grid, m)
        block = flat[idx].T
        res[idx] = (block - dt * (u @ block)).T
    return out


def _implicit_local(vals, grid, grads, dt, cfg, op, params):
    flat = vals.reshape(-1, grid.n)
    out = np.empty_like(flat)
    g = grads.reshape(-1, 2, 2)
    keys = {}
    for i in range(len(g)):
        keys.setdefault(g[i].tobytes(), []).append(i)
    for kb, idx in keys.items():
        m = np.frombuffer(kb).reshape(2, 2)
        if np.any(m):
            fac = _stiff_factor(op, params, dt, cfg, extra=-_stretch_matrix(grid, m), key=kb)
        else:
            fac = _stiff_factor(op, params, dt, cfg)
        out[idx] = fac.solve(flat[idx].T).T
    return out.reshape(vals.shape)


def step_full(f, u_L, cfg, params, dt=None):
    """One split step of the full (x, r) equation on ``T^2 x grid``.

    Strang order: half x-transport, half local stretching with
    ``grad u_L(x)``, implicit r-operator per x-cell, half stretching,
    half x-transport.  With ``scheme="implicit"`` the stretching and the
    r-operator form one implicit system per distinct ``grad u_L(x)``.
    """
    _check_alpha(f, params)
    if not f.x_shape or len(f.x_shape) != 2:
        raise ValueError("step_full needs values over a 2D x-grid")
    dt = cfg.dt if dt is None else dt
    grid = f.grid
    xs = transport.torus_grid(*f.x_shape)
    grads = np.asarray(u_L.gradient(xs), dtype=float)
    has_stretch = bool(np.any(grads))
    if has_stretch and not isinstance(grid, CartesianRGrid):
        raise ValueError("a nonzero velocity gradient needs a CartesianRGrid in r")
    op = operator_for(grid, params)
    feet = _cached(("feet", u_L, f.x_shape, round(0.5 * dt, 15)),
                   lambda: transport.departure_points(u_L, f.x_shape, 0.5 * dt))
    v = f.values
    v = transport.sl_interpolate(v, feet)
    if cfg.scheme == "implicit" and has_stretch:
        v = _implicit_local(v, grid, grads, dt, cfg, op, params)
    elif has_stretch:
        half = 0.5 * dt if cfg.scheme == "strang" else dt
        v = _local_stretch(v, grid, grads, half, cfg, op, params)
        v = _stiff_apply(v, op, params, dt, cfg)
        if cfg.scheme == "strang":
            v = _local_stretch(v, grid, grads, half, cfg, op, params)
    else:
        v = _stiff_apply(v, op, params, dt, cfg)
    v = transport.sl_interpolate(v, feet)
    return _wrap(f, v)


# ---------------------------------------------------------------- ledger

@dataclass
class EnergyLedger:
    """Sampled quantities of the a-priori estimates.

    Attributes
    ----------
    times, h_alpha_sq, dissipation_integral, l1_norm, bound_k : list of float
        Per-sample ``t``, ``||f||^2_{H_alpha}``, cumulative dissipation
        ``(1/(zeta alpha tau)) int_0^t D(f)``, ``||f||_{L1}`` and ``e^{Kt} Lambda``.
    gradient_integral, gradient_bound : list of float
        Cumulative ``(1/(2 zeta tau alpha)) int_0^t int |grad f|^2 (1+|r|^2/2)^(alpha+1)``
        and ``e^{Ct} Lambda``.
    min_value, max_value : list of float
        Extremes of ``f`` at each sample.
    k_rate, c_rate, lam : float
        ``K = 2 alpha |grad u_L|_inf``, ``C = (d/2 + 10 alpha)/(zeta tau) + K`` and ``Lambda``.
    """

    k_rate: float
    c_rate: float
    lam: float
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    h_alpha_sq: list = field(default_factory=list)
    dissipation_integral: list = field(default_factory=list)
    l1_norm: list = field(default_factory=list)
    bound_k: list = field(default_factory=list)
    gradient_integral: list = field(default_factory=list)
    gradient_bound: list = field(default_factory=list)
    min_value: list = field(default_factory=list)
    max_value: list = field(default_factory=list)
    signed_start: bool = False

    def record(self, step, t, h, diss, l1, grad_int, fmin, fmax):
        self.steps.append(int(step))
        self.times.append(float(t))
        self.h_alpha_sq.append(float(h))
        self.dissipation_integral.append(float(diss))
        self.l1_norm.append(float(l1))
        self.gradient_integral.append(float(grad_int))
        self.min_value.append(float(fmin))
        self.max_value.append(float(fmax))
        self.bound_k.append(_exp_bound(self.k_rate, t, self.lam))
        self.gradient_bound.append(_exp_bound(self.c_rate, t, self.lam))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h_alpha_sq", "dissipation", "l1", "bound"])
            for row in zip(self.times, self.h_alpha_sq, self.dissipation_integral,
                           self.l1_norm, self.bound_k):
                w.writerow([repr(float(v)) for v in row])


def _exp_bound(rate, t, lam):
    """``e^{rate t} lam`` saturating at ``inf`` instead of overflowing."""
    if lam <= 0:
        return 0.0
    lg = rate * t + math.log(lam)
    return math.exp(lg) if lg < 700 else math.inf


def _norm_terms(f, op):
    """x-averaged ``||f||^2_{H_alpha}``, ``D_iso(f)``, ``G_{alpha+1}(f)``, ``||f||_{L1}``."""
    vt = np.ascontiguousarray(f.values.reshape(-1, f.grid.n).T)
    wv = (op.volumes * op.weight)[:, None]
    h = np.mean(np.sum(wv * vt * vt, axis=0))
    ut = vt * op.weight[:, None]
    d_iso = np.mean(-np.sum(ut * (op.stiffness_iso @ ut), axis=0))
    q = _cached(("G", f.grid, op.alpha), lambda: gradient_energy_matrix(f.grid, op.alpha + 1.0))
    g = np.mean(-np.sum(vt * (q @ vt), axis=0))
    l1 = np.mean(op.volumes @ np.abs(vt))
    return float(h), float(d_iso), float(g), float(l1)


# ---------------------------------------------------------------- driver

@dataclass
class RunResult:
    """Final field, ledger and any per-step observables."""

    field: WeightedField
    ledger: EnergyLedger
    observables: dict = field(default_factory=dict)


def run(f0, cfg, params, grad_u=None, u_L=None, observe=None, every=1):
    """Integrate from ``f0`` to ``cfg.t_end`` and fill an :class:`EnergyLedger`.

    Parameters
    ----------
    f0 : WeightedField
    cfg : SolverConfig
    params : ModelParams
    grad_u : array, optional
        Constant gradient for the frozen mode (Cartesian r-grid, no x-grid).
    u_L : flow object, optional
        Velocity field for the full mode (values over an x-grid).
    observe : callable, optional
        ``observe(t, f)`` returning a dict of scalars, called at each sample.
    every : int
        Ledger sampling interval in steps (the dissipation is still
        accumulated every step).
    """
    op = operator_for(f0.grid, params)
    if u_L is not None:
        mode = "full"
        gsup = u_L.grad_sup()
    elif grad_u is not None and np.any(grad_u):
        mode = "frozen"
        gsup = float(np.linalg.norm(np.asarray(grad_u, dtype=float), 2))
    else:
        mode = "radial"
        gsup = 0.0
    k_rate = 2.0 * params.alpha * gsup
    c_rate = (params.d / 2.0 + 10.0 * params.alpha) / (params.zeta * params.tau) + k_rate
    h0, d0, g0, l10 = _norm_terms(f0, op)
    ledger = EnergyLedger(k_rate, c_rate, h0, signed_start=bool(np.min(f0.values) < 0))
    ledger.record(0, 0.0, h0, 0.0, l10, 0.0, np.min(f0.values), np.max(f0.values))
    obs = {}
    if observe is not None:
        for k, v in observe(0.0, f0).items():
            obs.setdefault(k, []).append(v)
    rate_d = params.relax_rate
    rate_g = 1.0 / (2.0 * params.zeta * params.tau * params.alpha)
    diss = lem = 0.0
    f = f0
    t = 0.0
    nsteps = cfg.n_steps
    for n in range(1, nsteps + 1):
        dt = min(cfg.dt, cfg.t_end - t) if n == nsteps else cfg.dt
        if mode == "full":
            f = step_full(f, u_L, cfg, params, dt)
        elif mode == "frozen":
            f = step_frozen_gradient(f, grad_u, cfg, params, dt)
        else:
            f = step_radial(f, cfg, params, dt)
        t = t + dt if n < nsteps else cfg.t_end
        h, d_iso, g, l1 = _norm_terms(f, op)
        diss += rate_d * d_iso * dt
        lem += rate_g * g * dt
        if n % every == 0 or n == nsteps:
            ledger.record(n, t, h, diss, l1, lem, np.min(f.values), np.max(f.values))
            if observe is not None:
                for k, v in observe(t, f).items():
                    obs.setdefault(k, []).append(v)
    return RunResult(f, ledger, obs)


# ---------------------------------------------------------------- monitors

@dataclass
class MonitorReport:
    """Outcome of a monitor over a ledger or history."""

    name: str
    passed: bool
    margin: float = float("nan")
    first_violation_time: float | None = None
    first_violation_step: int | None = None
    details: dict = field(default_factory=dict)

    def raise_if_failed(self):
        if not self.passed:
            raise MonitorViolation(
                f"{self.name} violated at step {self.first_violation_step} "
                f"(t = {self.first_violation_time})")
        return self


def energy_monitor(ledger, eps=EPS_MON):
    """Check both discrete energy estimates along the ledger.

    At every sample ``t_n``: ``||f(t_n)||^2 + dissipation(t_n) <= e^{K t_n} Lambda (1+eps)``
    and the same with the weighted gradient integral and rate ``C``.
    Margins are ``1 - lhs/bound`` at the final sample.  The combined
    ``sup_t ||f||^2 + dissipation(T)`` is reported against ``e^{KT} Lambda``
    as a diagnostic only: it can exceed the bound for any dissipating run.
    """
    h = np.asarray(ledger.h_alpha_sq)
    lhs_k = h + np.asarray(ledger.dissipation_integral)
    lhs_c = h + np.asarray(ledger.gradient_integral)
    bk = np.asarray(ledger.bound_k)
    bc = np.asarray(ledger.gradient_bound)
    bad_k = ~(lhs_k <= bk * (1.0 + eps))
    bad_c = ~(lhs_c <= bc * (1.0 + eps))
    bad = bad_k | bad_c
    first = int(np.argmax(bad)) if bad.any() else None
    mk = float(1.0 - lhs_k[-1] / bk[-1]) if bk[-1] > 0 else float("nan")
    mc = float(1.0 - lhs_c[-1] / bc[-1]) if np.isfinite(bc[-1]) and bc[-1] > 0 else 1.0
    sup_form = float(np.max(h) + ledger.dissipation_integral[-1])
    details = {"margin_k": mk, "margin_gradient": mc, "K": ledger.k_rate, "C": ledger.c_rate,
               "Lambda": ledger.lam, "violated_k": bool(bad_k.any()),
               "violated_gradient": bool(bad_c.any()),
               "sup_form_ratio": float(sup_form / bk[-1]) if bk[-1] > 0 else float("nan")}
    if first is None:
        return MonitorReport("energy", True, min(mk, mc), details=details)
    return MonitorReport("energy", False, min(mk, mc), float(ledger.times[first]),
                         int(ledger.steps[first]), details)


def l1_positivity_monitor(f_history, rtol=1e-10, neg_tol=1e-12):
    """Check ``||f(t)||_{L1} <= ||f_0||_{L1} (1 + rtol)`` and ``min f >= -neg_tol max f``.

    ``f_history`` is an :class:`EnergyLedger` or a sequence of
    :class:`WeightedField`.  For signed initial data the L1 check runs on
    ``|f|`` and the sign check is skipped.
    """
    if isinstance(f_history, EnergyLedger):
        times = f_history.times
        l1 = np.asarray(f_history.l1_norm)
        fmin = np.asarray(f_history.min_value)
        fmax = np.asarray(f_history.max_value)
        signed = f_history.signed_start
    else:
        hist = list(f_history)
        times = list(range(len(hist)))
        l1 = np.array([np.mean(np.abs(f.values).reshape(-1, f.grid.n) @ f.grid.weights) for f in hist])
        fmin = np.array([f.values.min() for f in hist])
        fmax = np.array([f.values.max() for f in hist])
        signed = bool(fmin[0] < 0)
    bad = l1 > l1[0] * (1.0 + rtol)
    if not signed:
        bad |= fmin < -neg_tol * np.maximum(fmax, 0.0)
    details = {"l1_initial": float(l1[0]), "l1_max_ratio": float(np.max(l1) / l1[0]),
               "min_over_max": float(np.min(fmin / np.maximum(fmax, 1e-300))), "signed": signed}
    if not bad.any():
        return MonitorReport("l1_positivity", True, float(1.0 - np.max(l1) / l1[0]), details=details)
    i = int(np.argmax(bad))
    return MonitorReport("l1_positivity", False, float(1.0 - np.max(l1) / l1[0]),
                         float(times[i]), i, details)


def mass_escape_diagnostic(f, radius):
    """Fraction ``int_{|r|<=R} f / int f`` (x-averaged).

    On radial grids the cell straddling ``R`` contributes its volume
    fraction inside ``R``.
    """
    g = f.grid
    v = f.values.reshape(-1, g.n)
    if isinstance(g, RadialGrid):
        lo = np.maximum(g.nodes - 0.5 * g.h, 0.0)
        hi = g.nodes + 0.5 * g.h
        frac = np.clip((np.minimum(radius, hi) ** g.d - lo ** g.d) / (hi ** g.d - lo ** g.d), 0.0, 1.0)
    else:
        frac = (g.radii <= radius).astype(float)
    total = np.mean(v @ g.weights)
    if total == 0:
        raise ValueError("zero total mass")
    inside = np.mean(v @ (g.weights * frac))
    return float(inside / total)


def x_marginal(f):
    """``int f dr`` per x-cell, as a TorusField."""
    if not f.x_shape:
        raise ValueError("field has no x-grid")
    return transport.TorusField(f.values @ f.grid.weights)


# ---------------------------------------------------------------- checkpoints

_MAGIC = "# polyturb-checkpoint 1"


def write_checkpoint(path, f, t=0.0, params=None, extra=None):
    """Text dump of a WeightedField or TorusField with a JSON header line.

    Values are written row by row with 17 significant digits, so a
    round trip is exact.
    """
    if isinstance(f, transport.TorusField):
        header = {"kind": "torus", "shape": list(f.shape)}
        vals = f.values.reshape(-1, f.shape[-1])
    else:
        header = {"kind": "weighted", "grid": f.grid.meta(), "alpha": f.alpha,
                  "x_shape": list(f.x_shape) if f.x_shape else None,
                  "nonnegative": bool(f.nonnegative)}
        vals = f.values.reshape(-1, f.grid.n)
    header["t"] = float(t)
    header["params"] = params.to_dict() if params is not None else None
    header["extra"] = extra or {}
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for row in vals:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`; returns ``(field, header)``."""
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != _MAGIC:
            raise ValueError("not a polyturb checkpoint")
        header = json.loads(fh.readline()[2:])
        vals = np.loadtxt(fh, ndmin=2)
    if header["kind"] == "torus":
        return transport.TorusField(vals.reshape(header["shape"])), header
    grid = grid_from_meta(header["grid"])
    xs = tuple(header["x_shape"]) if header["x_shape"] else None
    shape = (xs or ()) + (grid.n,)
    fld = WeightedField(vals.reshape(shape), header["alpha"], grid, xs, header["nonnegative"])
    return fld, header
