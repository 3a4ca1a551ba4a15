"""Stochastic dumbbell ensembles: pre-limit Hookean, limit SDE and FENE.

Random numbers come from counter-style streams: the thermal noise of
particle block ``j`` at step ``n`` is drawn from a generator seeded by
``SeedSequence(seed, spawn_key=(0, n, j))`` and the shared mode noise
from ``spawn_key=(1, n)``.  Results therefore do not depend on the
number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, replace
import json
import math
import struct

import numpy as np
from scipy import integrate

from . import _kernels
from .core_types import ModelParams, sample_radii

__all__ = [
    "StepGuardError",
    "FeneRetryError",
    "InsufficientSamples",
    "Ensemble",
    "TailFit",
    "Histogram",
    "BLOCK",
    "block_generators",
    "init_ensemble",
    "diffusion_sqrt",
    "ab_divergence",
    "hookean_step",
    "limit_sde_step",
    "fene_step",
    "simulate",
    "fene_density",
    "fene_cdf",
    "sample_fene_radii",
    "radial_histogram",
    "histogram_l1",
    "tail_exponent",
    "kuiper_uniform",
    "write_histogram_csv",
    "write_ensemble",
    "read_ensemble",
]

BLOCK = 65536
_MAGIC = b"PTENS001"
FENE_MAX_RETRY = 20


class StepGuardError(ValueError):
    """Time step too large for the relaxation time scale."""


class FeneRetryError(RuntimeError):
    """A FENE step kept leaving the ball after the maximum number of dt halvings."""


class InsufficientSamples(ValueError):
    """Too few samples in the tail-fit range."""


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Particle elongations (and optional torus positions) with RNG bookkeeping.

    Attributes
    ----------
    r_states : ndarray, shape (n_p, d)
    x_states : ndarray, shape (n_p, d) or None
    rng_seed : int
        Master seed (64-bit).
    step_count : int
        Steps taken; also the counter of the noise streams.
    params : ModelParams
    b_fene : float or None
        Squared radius of the FENE ball when the ensemble is FENE.
    """

    r_states: np.ndarray
    x_states: np.ndarray | None
    rng_seed: int
    step_count: int
    params: ModelParams
    b_fene: float | None = None

    def __post_init__(self):
        r = np.ascontiguousarray(self.r_states, dtype=float)
        if r.ndim != 2 or r.shape[1] != self.params.d:
            raise ValueError("r_states must have shape (n_p, d)")
        if not np.all(np.isfinite(r)):
            raise ValueError("ensemble contains non-finite states")
        object.__setattr__(self, "r_states", r)
        if self.x_states is not None:
            x = np.ascontiguousarray(self.x_states, dtype=float)
            if x.shape != r.shape or not np.all(np.isfinite(x)):
                raise ValueError("x_states must be finite with the shape of r_states")
            object.__setattr__(self, "x_states", x)
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.b_fene is not None and np.any(np.sum(r * r, axis=1) >= self.b_fene):
            raise ValueError("FENE ensemble has states outside the ball")

    @property
    def n(self):
        return self.r_states.shape[0]

    def radii(self):
        return np.sqrt(np.sum(self.r_states ** 2, axis=1))


def _seq(seed, key):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def block_generators(seed, step, n, block=BLOCK):
    """Per-block thermal-noise generators for step ``step``."""
    return [np.random.Generator(np.random.PCG64(_seq(seed, (0, step, j))))
            for j in range((n + block - 1) // block)]


def _block_normals(seed, step, n, d, block=BLOCK):
    gens = block_generators(seed, step, n, block)
    return [g.standard_normal((min(block, n - j * block), d)) for j, g in enumerate(gens)]


def init_ensemble(params, n_p, seed, start="equilibrium", b_fene=None, torus=False):
    """Build an ensemble.

    ``start`` is ``"equilibrium"`` (exact ``p_alpha`` samples, or the FENE
    stationary law when ``b_fene`` is given), ``"gaussian"`` (unit
    covariance) or ``"origin"``.
    """
    d = params.d
    rng = np.random.Generator(np.random.PCG64(_seq(seed, (2,))))
    if start == "origin":
        r = np.zeros((n_p, d))
    elif start == "gaussian":
        r = rng.standard_normal((n_p, d))
        if b_fene is not None:
            cap = 0.9 * math.sqrt(b_fene)
            nr = np.linalg.norm(r, axis=1, keepdims=True)
            r = np.where(nr > cap, r * (cap / np.maximum(nr, 1e-300)), r)
    elif start == "equilibrium":
        if b_fene is None:
            v = sample_radii(rng, n_p, params.alpha, d)
        else:
            v = sample_fene_radii(rng, n_p, params.alpha, d, b_fene)
        u = rng.standard_normal((n_p, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = v[:, None] * u
    else:
        raise ValueError(f"unknown start {start!r}")
    x = rng.uniform(0.0, 2 * math.pi, (n_p, d)) if torus else None
    return Ensemble(r, x, int(seed), 0, params, b_fene)


# ---------------------------------------------------------------- coefficients

def diffusion_sqrt(r, b):
    """Closed-form ``B(r)`` with ``B B^T = I + A_b(r)/2``.

    Eigenvalue ``1+|r|^2/2`` along ``r`` and ``1+(b+1)|r|^2/2`` across it.
    """
    r = np.asarray(r, dtype=float)
    d = r.shape[-1]
    s = np.sum(r * r, axis=-1)[..., None, None]
    nr = np.sqrt(s)
    u = np.where(nr > 0, r[..., :, None] / np.where(nr > 0, nr, 1.0), 0.0)
    proj = u * np.swapaxes(u, -1, -2)
    eye = np.eye(d)
    return np.sqrt(1 + 0.5 * s) * proj + np.sqrt(1 + 0.5 * (b + 1) * s) * (eye - proj)


def ab_divergence(r, b, h=1e-5):
    """Central-difference ``sum_j d_j (A_b)_{ij}`` at ``r``."""
    r = np.asarray(r, dtype=float)
    d = r.shape[0]

    def ab(q):
        return (b + 1) * (q @ q) * np.eye(d) - b * np.outer(q, q)

    out = np.zeros(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out += (ab(r + e)[:, j] - ab(r - e)[:, j]) / (2 * h)
    return out


def _grad_matrix(grad_u, d):
    m = np.zeros((d, d)) if grad_u is None else np.asarray(grad_u, dtype=float)
    if m.shape != (d, d):
        raise ValueError(f"grad_u must be {d}x{d}")
    return np.ascontiguousarray(m)


def _run_blocks(fn, n_blocks, workers):
    if workers and workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, range(n_blocks)))
    return [fn(j) for j in range(n_blocks)]


# ---------------------------------------------------------------- steppers

def limit_sde_step(ens, grad_u, dt, params=None, workers=1):
    """Euler-Maruyama step of ``dR = (M R - R/(zeta tau)) dt + sqrt(2/(zeta alpha tau)) B(R) dW``.

    ``div A_b = 0`` so no Ito drift correction is needed.
    """
    params = ens.params if params is None else params
    if dt / params.beta > 0.1:
        raise StepGuardError(f"dt/beta = {dt / params.beta:.3g} exceeds 0.1")
    m = _grad_matrix(grad_u, params.d)
    noise = math.sqrt(2.0 * params.relax_rate)
    xi = _block_normals(ens.rng_seed, ens.step_count, ens.n, params.d)
    r = ens.r_states

    def one(j):
        s = slice(j * BLOCK, j * BLOCK + xi[j].shape[0])
        return np.asarray(_kernels.limit_sde_update(
            np.ascontiguousarray(r[s]), xi[j], m, dt, 1.0 / params.beta, noise, float(params.b)))

    out = np.concatenate(_run_blocks(one, len(xi), workers), axis=0)
    return replace(ens, r_states=out, step_count=ens.step_count + 1)


def fene_step(ens, dt, params=None, b_fene=None, grad_u=None, workers=1, max_retry=FENE_MAX_RETRY):
    """Step with the FENE spring ``-(R/beta)/(1-|R|^2/b)`` and the limit diffusion.

    The linear part is explicit as in :func:`limit_sde_step`; the excess
    spring is solved implicitly along the radius, which keeps every state
    inside the ball.  A particle whose step is rejected is retried with
    ``dt`` halved and its Brownian increment split evenly, up to
    ``max_retry`` levels.
    """
    params = ens.params if params is None else params
    bf = ens.b_fene if b_fene is None else float(b_fene)
    if bf is None or not bf > 0:
        raise ValueError("b_fene must be positive")
    if dt / params.beta > 0.1:
        raise StepGuardError(f"dt/beta = {dt / params.beta:.3g} exceeds 0.1")
    m = _grad_matrix(grad_u, params.d)
    noise = math.sqrt(2.0 * params.relax_rate)
    xi = _block_normals(ens.rng_seed, ens.step_count, ens.n, params.d)
    r = ens.r_states

    def one(j):
        s = slice(j * BLOCK, j * BLOCK + xi[j].shape[0])
        return _kernels.fene_update(np.ascontiguousarray(r[s]), xi[j], m, dt, 1.0 / params.beta,
                                    noise, float(params.b), bf, int(max_retry))

    parts = _run_blocks(one, len(xi), workers)
    if any(p[0] is None for p in parts):
        raise FeneRetryError(f"FENE step rejected after {max_retry} dt halvings; dt too large")
    out = np.concatenate([np.asarray(p[0]) for p in parts], axis=0)
    return replace(ens, r_states=out, step_count=ens.step_count + 1, b_fene=bf)


def _mode_fields(modes, x):
    """``sigma_k(x)`` (n, d) per mode and ``grad sigma_k(x)`` contracted later."""
    kx = x @ modes.k.T.astype(float)
    c, s = np.cos(kx), np.sin(kx)
    ph = np.where(modes.phase == 0, c, s) * modes.amp
    dph = np.where(modes.phase == 0, -s, c) * modes.amp
    return ph, dph


def _noise_terms(modes, x, r, dw):
    """Velocity and stretching increments ``sum_k sigma_k dW_k`` and ``sum_k grad sigma_k r dW_k``."""
    ph, dph = _mode_fields(modes, x)
    kf = modes.k.astype(float)
    vel = (ph * dw) @ modes.dirs
    kr = r @ kf.T
    stretch = (dph * kr * dw) @ modes.dirs
    return vel, stretch


def hookean_step(ens, modes, u_L_grad, dt, thermal=True):
    """Stratonovich-Heun step of the pre-limit Hookean model.

    ``dX = u_L dt + sum_k sigma_k(X) o dW_k`` and
    ``dR = (grad u_L(X) R - R/beta) dt + sum_k grad sigma_k(X) R o dW_k + sqrt(2) sigma dB``.

    Parameters
    ----------
    ens : Ensemble
        Must carry ``x_states``.
    modes : ModeSet
        Shared small-scale field; its increments ``dW_k`` are common to all particles.
    u_L_grad : flow object, callable or None
        A flow object (``velocity`` and ``gradient``) drives both ``X`` and
        ``R``; a plain callable ``x -> grad u_L(x)`` only stretches ``R``.
    thermal : bool
        Include the thermal noise of variance ``2 sigma^2 dt`` per axis.
    """
    p = ens.params
    if modes.d != p.d:
        raise ValueError("mode dimension differs from the ensemble")
    if ens.x_states is None:
        raise ValueError("hookean_step needs particle positions")
    if dt / p.beta > 0.1:
        raise StepGuardError(f"dt/beta = {dt / p.beta:.3g} exceeds 0.1")
    rng_m = np.random.Generator(np.random.PCG64(_seq(ens.rng_seed, (1, ens.step_count))))
    dw = rng_m.standard_normal(len(modes)) * math.sqrt(dt)
    th = np.concatenate(_block_normals(ens.rng_seed, ens.step_count, ens.n, p.d), axis=0)
    th *= math.sqrt(2.0 * p.sigma_sq * dt) if thermal else 0.0

    if u_L_grad is None:
        vel_l = lambda x: 0.0  # noqa: E731
        grad_l = lambda x: np.zeros(x.shape[:-1] + (p.d, p.d))  # noqa: E731
    elif hasattr(u_L_grad, "gradient"):
        vel_l, grad_l = u_L_grad.velocity, u_L_grad.gradient
    else:
        vel_l = lambda x: 0.0  # noqa: E731
        grad_l = u_L_grad

    def rates(x, r):
        g = grad_l(x)
        drift_x = vel_l(x) * dt
        drift_r = (np.einsum("nij,nj->ni", g, r) - r / p.beta) * dt
        vel, stretch = _noise_terms(modes, x, r, dw)
        return drift_x + vel, drift_r + stretch

    x0, r0 = ens.x_states, ens.r_states
    ax, ar = rates(x0, r0)
    xp, rp = x0 + ax, r0 + ar + th
    bx, br = rates(xp, rp)
    x1 = np.mod(x0 + 0.5 * (ax + bx), 2 * math.pi)
    r1 = r0 + 0.5 * (ar + br) + th
    return replace(ens, r_states=r1, x_states=x1, step_count=ens.step_count + 1)


def simulate(ens, n_steps, dt, kind="limit", grad_u=None, workers=1, snapshots=()):
    """Advance ``n_steps`` steps of ``kind`` in {"limit", "fene"}; return the final ensemble.

    With ``snapshots`` (step indices) also returns a dict of radii copies.
    """
    snaps = {}
    want = set(int(s) for s in snapshots)
    for n in range(1, n_steps + 1):
        if kind == "limit":
            ens = limit_sde_step(ens, grad_u, dt, workers=workers)
        elif kind == "fene":
            ens = fene_step(ens, dt, grad_u=grad_u, workers=workers)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        if n in want:
            snaps[n] = ens.radii()
    return (ens, snaps) if snapshots else ens


# ---------------------------------------------------------------- FENE law

def fene_density(v, alpha, d, b_fene):
    """Unnormalised radial density ``v^(d-1) (1-v^2/b)^g (1+v^2/2)^(-g)``, ``g = alpha b/(2+b)``."""
    v = np.asarray(v, dtype=float)
    g = alpha * b_fene / (2.0 + b_fene)
    s = v * v
    inside = s < b_fene
    out = np.zeros_like(v)
    out[inside] = v[inside] ** (d - 1) * (1 - s[inside] / b_fene) ** g * (1 + 0.5 * s[inside]) ** (-g)
    return out


def fene_cdf(v, alpha, d, b_fene):
    """Normalised radial CDF of the FENE stationary law (adaptive quadrature)."""
    def pdf(t):
        return float(fene_density(np.array([t]), alpha, d, b_fene)[0])

    root = math.sqrt(b_fene)
    v = np.clip(np.atleast_1d(np.asarray(v, dtype=float)), 0.0, root)
    order = np.argsort(v)
    pts = np.concatenate([[0.0], v[order]])
    pieces = [integrate.quad(pdf, a, b, limit=200, epsabs=0, epsrel=1e-11)[0]
              for a, b in zip(pts[:-1], pts[1:])]
    total = sum(pieces) + integrate.quad(pdf, pts[-1], root, limit=200, epsabs=0, epsrel=1e-11)[0]
    out = np.empty_like(v)
    out[order] = np.cumsum(pieces) / total
    return out


def sample_fene_radii(rng, n, alpha, d, b_fene, n_grid=20001):
    """Inverse-CDF samples of the FENE stationary radius (tabulated CDF)."""
    v = np.linspace(0.0, math.sqrt(b_fene), n_grid)
    pdf = fene_density(v, alpha, d, b_fene)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(v))])
    cdf /= cdf[-1]
    u = rng.uniform(0.0, 1.0, n)
    out = np.interp(u, cdf, v)
    return np.minimum(out, math.sqrt(b_fene) * (1 - 1e-12))


# ---------------------------------------------------------------- histograms

@dataclass(frozen=True)
class Histogram:
    """Radial histogram normalised against the total sample count."""

    edges: np.ndarray
    counts: np.ndarray
    n_total: int

    @property
    def density(self):
        return self.counts / (self.n_total * np.diff(self.edges))

    def write_csv(self, path):
        write_histogram_csv(path, self)


def radial_histogram(radii, edges):
    radii = np.asarray(radii, dtype=float)
    counts, _ = np.histogram(radii, bins=edges)
    return Histogram(np.asarray(edges, dtype=float), counts.astype(np.int64), int(radii.size))


def histogram_l1(hist, cdf):
    """L1 distance between the empirical and exact radial laws.

    ``cdf`` is the exact radial CDF; bins compare probabilities and the
    mass outside the binned range enters as one extra cell.
    """
    exact = np.diff(cdf(hist.edges))
    emp = hist.counts / hist.n_total
    return float(np.sum(np.abs(emp - exact)) + abs(exact.sum() - emp.sum()))


def write_histogram_csv(path, hist):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count", "density"])
        for lo, hi, c, dens in zip(hist.edges[:-1], hist.edges[1:], hist.counts, hist.density):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(dens))])


# ---------------------------------------------------------------- tails

@dataclass(frozen=True)
class TailFit:
    """Power-law fit of the radial density over ``fit_range``.

    Attributes
    ----------
    exponent : float
        Log-log slope of the radial pdf.
    ci_halfwidth : float
        95 percent half-width of the slope.
    fit_range : tuple
        ``(v_lo, v_hi)``.
    n_samples : int
        Samples inside the range.
    hill_exponent : float
        Pdf slope implied by the Hill estimate of the survival tail above ``v_lo``.
    discrepancy : float
        ``|exponent - hill_exponent|``.
    curvature : float
        Change of the local slope across the range from a quadratic fit.
    power_law : bool
        Whether the curvature is below the acceptance threshold.
    """

    exponent: float
    ci_halfwidth: float
    fit_range: tuple
    n_samples: int
    hill_exponent: float = float("nan")
    discrepancy: float = float("nan")
    curvature: float = float("nan")
    power_law: bool = True


def tail_exponent(samples, fit_range, n_bins=20, min_samples=10_000, curvature_max=0.5):
    """Log-log slope of the radial pdf over ``fit_range`` with a Hill cross-check.

    Bins are log-spaced; the slope is a count-weighted least squares fit
    of log density on log radius.
    """
    v = np.asarray(samples, dtype=float)
    lo, hi = float(fit_range[0]), float(fit_range[1])
    if not 0 < lo < hi:
        raise ValueError("fit_range must satisfy 0 < v_lo < v_hi")
    inside = (v >= lo) & (v < hi)
    n_in = int(np.sum(inside))
    if n_in < min_samples:
        raise InsufficientSamples(f"{n_in} samples in [{lo}, {hi}), need {min_samples}")
    edges = np.geomspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(v[inside], bins=edges)
    keep = counts > 0
    centre = np.sqrt(edges[:-1] * edges[1:])[keep]
    dens = counts[keep] / (v.size * np.diff(edges)[keep])
    x = np.log(centre)
    y = np.log(dens)
    w = counts[keep].astype(float)
    xm = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - np.sum(w * y) / np.sum(w))) / sxx)
    ci = float(1.96 / math.sqrt(sxx))
    c2 = np.polyfit(x - xm, y, 2, w=np.sqrt(w))[0]
    curv = float(abs(2.0 * c2) * (x[-1] - x[0]))
    tail = v[v >= lo]
    hill = float(1.0 / np.mean(np.log(tail / lo)))
    hill_slope = -(hill + 1.0)
    return TailFit(slope, ci, (lo, hi), n_in, hill_slope, abs(slope - hill_slope), curv,
                   curv < curvature_max)


def kuiper_uniform(angles):
    """Kuiper test of uniformity on the circle; returns ``(V, p_value)``."""
    u = np.sort(np.mod(np.asarray(angles, dtype=float), 2 * math.pi) / (2 * math.pi))
    n = u.size
    i = np.arange(1, n + 1)
    v = float(np.max(i / n - u) + np.max(u - (i - 1) / n))
    lam = (math.sqrt(n) + 0.155 + 0.24 / math.sqrt(n)) * v
    j = np.arange(1, 101)
    p = float(np.sum(2 * (4 * j ** 2 * lam ** 2 - 1) * np.exp(-2 * j ** 2 * lam ** 2)))
    return v, min(max(p, 0.0), 1.0)


# ---------------------------------------------------------------- binary dump

def write_ensemble(path, ens, extra=None):
    """Binary dump: magic, header length, JSON header (seed, params, ...), float64 arrays."""
    header = {
        "seed": int(ens.rng_seed),
        "step_count": int(ens.step_count),
        "n": int(ens.n),
        "d": int(ens.params.d),
        "has_x": ens.x_states is not None,
        "b_fene": ens.b_fene,
        "params": ens.params.to_dict(),
        "dtype": "<f8",
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(ens.r_states.astype("<f8").tobytes())
        if ens.x_states is not None:
            fh.write(ens.x_states.astype("<f8").tobytes())


def read_ensemble(path):
    """Inverse of :func:`write_ensemble`; returns ``(Ensemble, header)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a polyturb ensemble dump")
        (ln,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(ln))
        n, d = header["n"], header["d"]
        r = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        x = None
        if header["has_x"]:
            x = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
    pd = dict(header["params"])
    params = ModelParams(d=pd["d"], alpha=pd["alpha"], zeta=pd["zeta"], tau=pd["tau"],
                         c3=pd["c3"], gamma_coef=pd["gamma_coef"])
    return Ensemble(r, x, header["seed"], header["step_count"], params, header["b_fene"]), header
