"""Continuity equation for the x-marginal on the 2D torus.

Semi-Lagrangian stepping: values are interpolated at the backward
characteristic feet with periodic bicubic Lagrange interpolation.
Velocity fields are closed-form callables, so characteristics are exact
when the flow map is known and RK4 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels

__all__ = [
    "TorusField",
    "ShearFlow",
    "TaylorGreen",
    "ZeroFlow",
    "torus_grid",
    "divergence_sup",
    "departure_points",
    "sl_interpolate",
    "advect",
    "StabilityReport",
    "stability_check",
]

TWO_PI = 2.0 * math.pi


def torus_grid(n1, n2=None):
    """Cell-centred points of ``[0, 2 pi)^2`` as an array (n1, n2, 2)."""
    n2 = n1 if n2 is None else n2
    a = (np.arange(n1) + 0.5) * TWO_PI / n1
    b = (np.arange(n2) + 0.5) * TWO_PI / n2
    x1, x2 = np.meshgrid(a, b, indexing="ij")
    return np.stack([x1, x2], axis=-1)


@dataclass(frozen=True, eq=False)
class TorusField:
    """Scalar field on a uniform periodic grid of ``[0, 2 pi)^2``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("TorusField values must be 2D")
        if not np.all(np.isfinite(v)):
            raise ValueError("TorusField values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def spacing(self):
        return (TWO_PI / self.shape[0], TWO_PI / self.shape[1])

    @property
    def points(self):
        return torus_grid(*self.shape)

    def l2(self):
        """L2 norm for the normalised torus measure."""
        return float(np.sqrt(np.mean(self.values ** 2)))

    def mean(self):
        return float(np.mean(self.values))

    @classmethod
    def from_function(cls, func, n1, n2=None):
        return cls(func(torus_grid(n1, n2)))


class _Flow:
    """Steady closed-form velocity field on the torus."""

    def velocity(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def flow_map(self, x, t):
        """Exact position after time ``t`` along the flow, or None if unknown."""
        return None

    def grad_sup(self, n=64):
        """Sup over the torus of the spectral norm of the velocity gradient."""
        g = self.gradient(torus_grid(n))
        return float(np.max(np.linalg.norm(g, ord=2, axis=(-2, -1))))

    def __call__(self, x):
        return self.velocity(x)


@dataclass(frozen=True)
class ShearFlow(_Flow):
    """``u = (A sin x2, 0)`` with straight-line characteristics."""

    amplitude: float = 1.0

    def velocity(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([self.amplitude * np.sin(x[..., 1]), np.zeros(x.shape[:-1])], axis=-1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 1] = self.amplitude * np.cos(x[..., 1])
        return g

    def flow_map(self, x, t):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., 0] = x[..., 0] + t * self.amplitude * np.sin(x[..., 1])
        return out

    def grad_sup(self, n=64):
        return abs(self.amplitude)


@dataclass(frozen=True)
class TaylorGreen(_Flow):
    """``u = A (sin x1 cos x2, -cos x1 sin x2)``."""

    amplitude: float = 1.0

    def velocity(self, x):
        x = np.asarray(x, dtype=float)
        s1, c1 = np.sin(x[..., 0]), np.cos(x[..., 0])
        s2, c2 = np.sin(x[..., 1]), np.cos(x[..., 1])
        return self.amplitude * np.stack([s1 * c2, -c1 * s2], axis=-1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        s1, c1 = np.sin(x[..., 0]), np.cos(x[..., 0])
        s2, c2 = np.sin(x[..., 1]), np.cos(x[..., 1])
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = c1 * c2
        g[..., 0, 1] = -s1 * s2
        g[..., 1, 0] = s1 * s2
        g[..., 1, 1] = -c1 * c2
        return self.amplitude * g

    def grad_sup(self, n=64):
        return abs(self.amplitude)


@dataclass(frozen=True)
class ZeroFlow(_Flow):
    """``u = 0``."""

    def velocity(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))

    def flow_map(self, x, t):
        return np.asarray(x, dtype=float).copy()

    def grad_sup(self, n=64):
        return 0.0


def divergence_sup(u_L, n=64):
    """Max-norm of the spectral divergence of ``u_L`` sampled on an ``n x n`` grid."""
    u = u_L.velocity(torus_grid(n))
    k = np.fft.fftfreq(n, d=1.0 / n)
    div = (np.fft.ifft(1j * k[:, None] * np.fft.fft(u[..., 0], axis=0), axis=0).real
           + np.fft.ifft(1j * k[None, :] * np.fft.fft(u[..., 1], axis=1), axis=1).real)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("velocity field produced non-finite values")
    return float(np.max(np.abs(div)))


def _rk4_back(u_L, x, dt, substeps):
    h = -dt / substeps
    y = np.array(x, dtype=float)
    for _ in range(substeps):
        k1 = u_L.velocity(y)
        k2 = u_L.velocity(y + 0.5 * h * k1)
        k3 = u_L.velocity(y + 0.5 * h * k2)
        k4 = u_L.velocity(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def departure_points(u_L, shape, dt, substeps=4):
    """Feet of backward characteristics from the grid points over ``dt``."""
    x = torus_grid(*shape)
    y = u_L.flow_map(x, -dt)
    if y is None:
        y = _rk4_back(u_L, x, dt, substeps)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite characteristic foot")
    return y


def sl_interpolate(values, feet, clip=False):
    """Interpolate periodic ``values`` (n1, n2, ...) at ``feet`` (n1, n2, 2).

    Trailing axes of ``values`` are treated as independent channels.
    """
    n1, n2 = values.shape[:2]
    chan = values.shape[2:]
    f3 = np.ascontiguousarray(values.reshape(n1, n2, -1))
    q1 = np.ascontiguousarray((feet[..., 0] * (n1 / TWO_PI) - 0.5).ravel())
    q2 = np.ascontiguousarray((feet[..., 1] * (n2 / TWO_PI) - 0.5).ravel())
    out = _kernels.interp_periodic(f3, q1, q2, bool(clip))
    return np.asarray(out).reshape((n1, n2) + chan)


def _conserve(new, old):
    """Restore the cell mean of each channel by a uniform shift."""
    return new + (old.mean(axis=(0, 1)) - new.mean(axis=(0, 1)))


def advect(rho, u_L, dt, t_end, clip=False, history=False, check_divergence=True):
    """Evolve ``d rho/dt + u_L . grad rho = 0`` to ``t_end``.

    Parameters
    ----------
    rho : TorusField
    u_L : flow object with ``velocity``/``gradient`` (and optionally ``flow_map``)
    dt : float
        Step; the last step is shortened to land on ``t_end``.
    clip : bool
        Limit interpolated values to the enclosing cell's corner values.
    history : bool
        Also return the list of (t, TorusField) snapshots.
    """
    if check_divergence:
        div = divergence_sup(u_L)
        if div > 1e-10:
            raise ValueError(f"velocity field is not divergence-free (|div| = {div:.2e})")
    v = rho.values.copy()
    t = 0.0
    snaps = [(0.0, TorusField(v.copy()))]
    feet_cache = {}
    while t < t_end - 1e-14 * max(1.0, t_end):
        h = min(dt, t_end - t)
        key = round(h, 15)
        if key not in feet_cache:
            feet_cache[key] = departure_points(u_L, v.shape, h)
        v = _conserve(sl_interpolate(v, feet_cache[key], clip), v)
        t += h
        if history:
            snaps.append((t, TorusField(v.copy())))
    out = TorusField(v)
    return (out, snaps) if history else out


@dataclass
class StabilityReport:
    """Result of the L2 stability check for two transported fields."""

    passed: bool
    times: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    initial_distance: float = 0.0
    first_violation_time: float | None = None


def stability_check(rho1_0, rho2_0, u_L, t_end, dt=0.1, clip=False, rtol=1e-6):
    """Check ``sup_t ||rho1(t) - rho2(t)|| <= ||rho1(0) - rho2(0)|| (1 + rtol)``."""
    if rho1_0.shape != rho2_0.shape:
        raise ValueError("fields live on different grids")
    stack = np.stack([rho1_0.values, rho2_0.values], axis=-1)
    div = divergence_sup(u_L)
    if div > 1e-10:
        raise ValueError(f"velocity field is not divergence-free (|div| = {div:.2e})")
    d0 = float(np.sqrt(np.mean((stack[..., 0] - stack[..., 1]) ** 2)))
    times, dists = [0.0], [d0]
    t = 0.0
    first = None
    feet_cache = {}
    while t < t_end - 1e-14 * max(1.0, t_end):
        h = min(dt, t_end - t)
        key = round(h, 15)
        if key not in feet_cache:
            feet_cache[key] = departure_points(u_L, stack.shape[:2], h)
        stack = _conserve(sl_interpolate(stack, feet_cache[key], clip), stack)
        t += h
        dist = float(np.sqrt(np.mean((stack[..., 0] - stack[..., 1]) ** 2)))
        times.append(t)
        dists.append(dist)
        if first is None and dist > d0 * (1.0 + rtol) + 1e-13:
            first = t
    return StabilityReport(first is None, times, dists, d0, first)
