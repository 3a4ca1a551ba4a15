"""Small-scale Fourier noise families and their stretching covariance.

Modes live in the band ``N <= |k| <= 2N``.  In 2D each lattice vector
carries one real mode, a cosine on ``K_+`` and a sine on ``K_-``.  In 3D
each pair ``+-k`` and frame vector ``a_{k,j}`` carries a cosine and a sine
mode with amplitude ``sqrt(2)*theta_k``.  This is the same field as the
complex form with unit-variance complex Brownian motions
``W = (B + iB')/sqrt(2)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import math

import numpy as np

from . import _kernels
from .core_types import ab_matrix, dimension_constant, stretch_index

__all__ = [
    "ModeSet",
    "ConvergenceTable",
    "MODE_CAP",
    "build_modes",
    "sample_velocity",
    "velocity_gradient",
    "corrector_matrix",
    "corrector_limit",
    "corrector_convergence_sweep",
    "write_modes_csv",
]

MODE_CAP = 10_000_000
_BLOCK = 8192


@dataclass(frozen=True, eq=False)
class ModeSet:
    """A finite family of real divergence-free Fourier modes.

    Attributes
    ----------
    d : int
        Dimension.
    n_band : int
        Band parameter N.
    intensity : float
        Prefactor a_tau.
    k : ndarray, shape (m, d)
        Integer wave vectors, one row per real mode.
    dirs : ndarray, shape (m, d)
        Unit polarisation vectors, orthogonal to ``k``.
    amp : ndarray, shape (m,)
        Real mode amplitudes.
    phase : ndarray of int32, shape (m,)
        0 for a cosine mode and 1 for a sine mode.
    frame : ndarray of int, shape (m,)
        Frame index j in 3D (1 or 2); 0 in 2D.
    quadrant : ndarray of str, shape (m,)
        ``"K+"``/``"K-"`` in 2D and ``"G+"``/``"G-"`` in 3D.
    """

    d: int
    n_band: int
    intensity: float
    k: np.ndarray
    dirs: np.ndarray
    amp: np.ndarray
    phase: np.ndarray
    frame: np.ndarray
    quadrant: np.ndarray

    def __len__(self):
        return int(self.amp.shape[0])

    @property
    def theta(self):
        """Scale-space coefficient ``a_tau/|k|^2`` (2D) or ``a_tau/|k|^{5/2}`` (3D)."""
        q = np.sqrt(np.sum(self.k.astype(float) ** 2, axis=1))
        return self.intensity / q ** (2.0 if self.d == 2 else 2.5)


def _band_vectors(d, n):
    g = np.arange(-2 * n, 2 * n + 1)
    grids = np.meshgrid(*([g] * d), indexing="ij")
    k = np.stack([a.ravel() for a in grids], axis=1)
    q = np.sum(k * k, axis=1)
    return k[(q >= n * n) & (q <= 4 * n * n)]


def _estimated_count(d, n):
    if d == 2:
        return int(1.1 * math.pi * 3 * n * n) + 64
    return int(1.1 * 4.0 / 3.0 * math.pi * 7 * n ** 3 * 2) + 256


def _frame(k):
    """Orthonormal pair orthogonal to each row of ``k`` (3D)."""
    kh = k / np.linalg.norm(k, axis=1, keepdims=True)
    axis = np.argmin(np.abs(k), axis=1)
    e = np.zeros_like(kh)
    e[np.arange(len(k)), axis] = 1.0
    a1 = e - np.sum(e * kh, axis=1, keepdims=True) * kh
    a1 /= np.linalg.norm(a1, axis=1, keepdims=True)
    a2 = np.cross(kh, a1)
    return a1, a2


def build_modes(d, n_band, intensity, max_modes=MODE_CAP):
    """Enumerate the real modes of the band ``n_band <= |k| <= 2 n_band``.

    Parameters
    ----------
    d : int
        Dimension, 2 or 3.
    n_band : int
        Band parameter N >= 1.
    intensity : float
        Prefactor a_tau.
    max_modes : int, optional
        Refuse to build more modes than this.

    Returns
    -------
    ModeSet
        Modes in lexicographic order of ``k`` (canonical ``k`` in 3D).
    """
    stretch_index(d)
    n_band = int(n_band)
    if n_band < 1:
        raise ValueError("n_band must be >= 1")
    if _estimated_count(d, n_band) > max_modes:
        raise MemoryError(f"mode count for d={d}, N={n_band} exceeds the cap {max_modes}")
    k = _band_vectors(d, n_band)
    if len(k) == 0:
        raise ValueError("empty band")
    if d == 2:
        qf = np.sqrt(np.sum(k.astype(float) ** 2, axis=1))
        kplus = ((k[:, 0] >= 0) & (k[:, 1] > 0)) | ((k[:, 0] > 0) & (k[:, 1] <= 0))
        dirs = np.stack([-k[:, 1], k[:, 0]], axis=1) / qf[:, None]
        amp = intensity / qf ** 2
        phase = np.where(kplus, 0, 1).astype(np.int32)
        frame = np.zeros(len(k), dtype=np.int64)
        quadrant = np.where(kplus, "K+", "K-")
        modes = ModeSet(2, n_band, float(intensity), k, dirs, amp, phase, frame, quadrant)
    else:
        nz = k != 0
        first = k[np.arange(len(k)), np.argmax(nz, axis=1)]
        kc = k[first > 0]
        a1, a2 = _frame(kc.astype(float))
        qf = np.sqrt(np.sum(kc.astype(float) ** 2, axis=1))
        theta = intensity / qf ** 2.5
        m = len(kc)
        # order per canonical k: (j=1 cos, j=1 sin, j=2 cos, j=2 sin)
        kk = np.repeat(kc, 4, axis=0)
        dirs = np.empty((4 * m, 3))
        dirs[0::4] = a1
        dirs[1::4] = a1
        dirs[2::4] = a2
        dirs[3::4] = a2
        amp = np.repeat(math.sqrt(2.0) * theta, 4)
        phase = np.tile(np.array([0, 1, 0, 1], dtype=np.int32), m)
        frame = np.tile(np.array([1, 1, 2, 2]), m)
        quadrant = np.tile(np.array(["G+", "G-", "G+", "G-"]), m)
        modes = ModeSet(3, n_band, float(intensity), kk, dirs, amp, phase, frame, quadrant)
    if len(modes) > max_modes:
        raise MemoryError(f"mode count {len(modes)} exceeds the cap {max_modes}")
    return modes


def _phases(modes, x):
    kx = np.asarray(x, dtype=float) @ modes.k.T.astype(float)
    return np.where(modes.phase == 0, np.cos(kx), np.sin(kx))


def sample_velocity(modes, x, gaussians):
    """One white-in-time slice ``sum_k sigma_k(x) g_k`` of the small-scale field.

    ``x`` may be a single point or an array of points (last axis d).
    """
    g = np.asarray(gaussians, dtype=float)
    if g.shape != (len(modes),):
        raise ValueError(f"expected {len(modes)} gaussians, got shape {g.shape}")
    ph = _phases(modes, x)
    return (ph * (modes.amp * g)) @ modes.dirs


def velocity_gradient(modes, x, gaussians):
    """Jacobian ``d u_i/d x_j`` of :func:`sample_velocity` at ``x``."""
    g = np.asarray(gaussians, dtype=float)
    kx = np.asarray(x, dtype=float) @ modes.k.T.astype(float)
    dph = np.where(modes.phase == 0, -np.sin(kx), np.cos(kx)) * (modes.amp * g)
    kf = modes.k.astype(float)
    return np.einsum("...m,mi,mj->...ij", dph, modes.dirs, kf)


def _tree_sum(parts):
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def corrector_matrix(modes, r, x=None, workers=1):
    """Stretching covariance ``A_N(r) = sum_k (grad sigma_k(x) r)(grad sigma_k(x) r)^T``.

    The sum is split into fixed blocks reduced pairwise, so the result is
    bit-identical for any ``workers``.
    """
    d = modes.d
    r = np.ascontiguousarray(r, dtype=float)
    if r.shape != (d,):
        raise ValueError(f"r must have shape ({d},)")
    x = np.zeros(d) if x is None else np.ascontiguousarray(x, dtype=float)
    kf = np.ascontiguousarray(modes.k, dtype=float)
    starts = range(0, len(modes), _BLOCK)

    def block(s):
        e = s + _BLOCK
        return _kernels.corrector_partial(
            kf[s:e], modes.dirs[s:e], modes.amp[s:e], modes.phase[s:e], x, r)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    return _tree_sum(parts)


def corrector_limit(d, intensity, r):
    """Limit value ``c_d * a_tau^2 * A_b(r)``."""
    return dimension_constant(d) * intensity ** 2 * ab_matrix(r, stretch_index(d))


@dataclass(frozen=True)
class ConvergenceTable:
    """Relative corrector errors over a sweep of bands.

    Attributes
    ----------
    rows : list of (N, probe_index, rel_error)
    slopes : list of float
        Least-squares slope of log error against log N, per probe.
    monotone : list of bool
        Whether every doubling of N reduced the error, per probe.
    """

    rows: list
    slopes: list
    monotone: list

    def errors(self, probe):
        return np.array([e for _, p, e in self.rows if p == probe])


def corrector_convergence_sweep(d, bands, r_probes, intensity=1.0, workers=1):
    """Relative Frobenius error of ``A_N(r)`` against its limit over ``bands``."""
    bands = [int(n) for n in bands]
    if any(b2 <= b1 for b1, b2 in zip(bands, bands[1:])):
        raise ValueError("bands must be strictly increasing")
    probes = [np.asarray(r, dtype=float) for r in r_probes]
    rows = []
    for n in bands:
        modes = build_modes(d, n, intensity)
        for i, r in enumerate(probes):
            target = corrector_limit(d, intensity, r)
            a = corrector_matrix(modes, r, workers=workers)
            rows.append((n, i, float(np.linalg.norm(a - target) / np.linalg.norm(target))))
    slopes, mono = [], []
    logn = np.log(np.array(bands, dtype=float))
    for i in range(len(probes)):
        err = np.array([e for _, p, e in rows if p == i])
        slopes.append(float(np.polyfit(logn, np.log(err), 1)[0]) if len(bands) > 1 else float("nan"))
        mono.append(bool(np.all(np.diff(err) < 0)))
    return ConvergenceTable(rows, slopes, mono)


def write_modes_csv(modes, path):
    """Dump a ModeSet as CSV: k components, direction, amplitude, phase, frame, quadrant."""
    d = modes.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"k{i + 1}" for i in range(d)] + [f"dir{i + 1}" for i in range(d)]
                   + ["amplitude", "phase_kind", "frame", "quadrant"])
        for m in range(len(modes)):
            w.writerow([int(v) for v in modes.k[m]] + [repr(float(v)) for v in modes.dirs[m]]
                       + [repr(float(modes.amp[m])), "cos" if modes.phase[m] == 0 else "sin",
                          int(modes.frame[m]), str(modes.quadrant[m])])
