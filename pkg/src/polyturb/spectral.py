"""Spectral gap of the coil-stretch operator and weighted Poincare constants.

For ``f = g P`` the quadratic form of ``-L`` in X_sigma is, on radial
functions, exactly the Poincare energy ``int |grad g|^2 (1+|y|^2/2) dnu``,
so the radial Rayleigh problem and the radial spectral gap coincide.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import math
import warnings

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as spla

from .coil_stretch_operator import assemble_cartesian, assemble_radial, cell_average
from .core_types import CartesianRGrid, ModelParams, RadialGrid

__all__ = [
    "TruncationWarning",
    "SpectralReport",
    "poincare_closed_form",
    "poincare_branches",
    "poincare_reference_constant",
    "poincare_rescaled_constant",
    "essential_spectrum_edge",
    "poincare_rayleigh",
    "poincare_best_estimate",
    "poincare_full_angular_estimate",
    "low_spectrum",
    "spectral_gap",
    "kernel_residual",
    "spectral_report",
]


class TruncationWarning(UserWarning):
    """An eigenvector has significant weight near the truncation radius."""


def _check_sigma(sigma, d):
    if not sigma > d / 2.0:
        raise ValueError(f"sigma={sigma} must exceed d/2={d / 2}")


def poincare_branches(sigma, d):
    """Both closed-form branches of the weighted Poincare constant (or None where invalid)."""
    _check_sigma(sigma, d)
    upper = lower = None
    if sigma >= d:
        q = 2.0 / (sigma - 1.0)
        upper = (math.sqrt(1.0 + q) + math.sqrt(q)) ** 2 / (4.0 * (sigma - 1.0))
    if sigma <= d:
        lower = 1.0 / (2.0 * (sigma - d / 2.0) ** 2)
    return {"upper": upper, "lower": lower}


def poincare_closed_form(sigma, d):
    """Closed-form weighted Poincare constant for ``nu_sigma ~ (1+|y|^2/2)^(-sigma)``.

    ``(sqrt(1+2/(s-1)) + sqrt(2/(s-1)))^2 / (4(s-1))`` for ``sigma >= d`` and
    ``1/(2(sigma-d/2)^2)`` for ``d/2 < sigma < d``.  At ``sigma = d`` the
    first branch is returned; both are available from
    :func:`poincare_branches`.
    """
    br = poincare_branches(sigma, d)
    return br["upper"] if br["upper"] is not None else br["lower"]


def poincare_reference_constant(sigma, d):
    """Constant for the measure ``(1+|x|^2)^(-sigma)`` with weight ``1+|x|^2``."""
    _check_sigma(sigma, d)
    if sigma >= d:
        q = 2.0 / (sigma - 1.0)
        return (math.sqrt(1.0 + q) + math.sqrt(q)) ** 2 / (2.0 * (sigma - 1.0))
    return 1.0 / (sigma - d / 2.0) ** 2


def poincare_rescaled_constant(sigma, d):
    """Reference constant transported by ``x = y/sqrt(2)``.

    The substitution gives ``|grad_y g|^2 (1+|y|^2/2) = |grad_x h|^2 (1+|x|^2) / 2``,
    so the constant for ``nu_sigma`` is twice the reference one.
    """
    return 2.0 * poincare_reference_constant(sigma, d)


def essential_spectrum_edge(sigma, d):
    """Bottom ``(sigma-d/2)^2/2`` of the essential spectrum of the radial Poincare operator.

    In ``t = log|y|`` the energy quotient tends to
    ``(1/2) int e^{-kt} u'^2 / int e^{-kt} u^2`` with ``k = 2 sigma - d``,
    whose spectrum starts at ``k^2/8``.  No constant smaller than the
    inverse of this value can be valid on R^d.
    """
    _check_sigma(sigma, d)
    return 0.5 * (sigma - d / 2.0) ** 2


def _pencil(op):
    """Symmetric pencil ``(-S, diag(V/W))`` of ``-L`` in the variable ``u = W f``."""
    return -op.stiffness, op.volumes / op.weight


def low_spectrum(op, k=3):
    """Lowest ``k`` eigenvalues of ``-L`` in X_alpha and their eigenvectors (as ``f``).

    Radial operators use a tridiagonal LAPACK solve; Cartesian ones use
    shift-invert Lanczos with a deterministic start vector.
    """
    a, m = _pencil(op)
    if isinstance(op.grid, RadialGrid):
        dinv = 1.0 / np.sqrt(m)
        diag = a.diagonal() * dinv * dinv
        off = a.diagonal(1) * dinv[:-1] * dinv[1:]
        vals, vecs = linalg.eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
        u = vecs * dinv[:, None]
    else:
        n = op.grid.n
        v0 = 1.0 + 0.5 * np.linspace(-1.0, 1.0, n)
        vals, u = spla.eigsh(sparse.csc_matrix(a), k=k, M=sparse.diags(m).tocsc(),
                             sigma=-1e-3, which="LM", v0=v0, tol=1e-12)
        order = np.argsort(vals)
        vals, u = vals[order], u[:, order]
    f = u / op.weight[:, None]
    return vals, f


def spectral_gap(op, return_spectrum=False):
    """Smallest nonzero eigenvalue of ``-L`` in X_alpha.

    The discrete kernel is exactly spanned by nodal ``P``, so the gap is
    the second eigenvalue.
    """
    vals, f = low_spectrum(op, k=3)
    if not vals[1] > 0:
        raise RuntimeError("eigensolver did not separate the kernel")
    return (float(vals[1]), vals, f) if return_spectrum else float(vals[1])


def kernel_residual(op, profile=None):
    """``||L_h p||/||p||`` in X_alpha for the cell-averaged profile ``p``."""
    alpha = op.alpha
    if profile is None:
        profile = cell_average(op.grid, lambda v: (1.0 + 0.5 * v * v) ** (-alpha))
    res = op.apply(profile)
    w = op.volumes * op.weight
    return float(np.sqrt(np.sum(w * res ** 2) / np.sum(w * profile ** 2)))


def poincare_rayleigh(g, sigma, grid):
    """Discrete ``Var_nu(g) / int |grad g|^2 (1+|y|^2/2) dnu`` on a radial grid."""
    op = assemble_radial(grid, ModelParams(d=grid.d, alpha=sigma))
    g = np.asarray(g, dtype=float)
    m = op.volumes / op.weight
    z = np.sum(m)
    mean = np.sum(m * g) / z
    var = np.sum(m * g * g) / z - mean ** 2
    energy = -(g @ (op.stiffness @ g)) / z
    return float(var / energy)


def _outer_fraction(g, m, grid):
    """Share of ``int g^2 dnu`` carried by the outer 10 percent of the radius."""
    radii = grid.radii
    outer = radii >= 0.9 * grid.r_max
    w = m * g * g
    return float(np.sum(w[outer]) / np.sum(w))


def poincare_best_estimate(sigma, d, grid, return_info=False):
    """Optimal radial-sector weighted Poincare constant on the truncated grid.

    Solves the generalised eigenproblem of the discrete Rayleigh quotient
    and returns ``1/lambda_min`` over mean-zero radial ``g``.  Issues a
    :class:`TruncationWarning` when the optimiser carries more than 1 percent
    of its weighted mass in the outer 10 percent of the grid.
    """
    _check_sigma(sigma, d)
    if grid.d != d:
        raise ValueError("grid dimension differs from d")
    op = assemble_radial(grid, ModelParams(d=d, alpha=sigma))
    gap, _, f = spectral_gap(op, return_spectrum=True)
    g = f[:, 1] * op.weight
    frac = _outer_fraction(g, op.volumes / op.weight, grid)
    if frac > 0.01:
        warnings.warn(
            f"Poincare optimiser at sigma={sigma} has {frac:.1%} of its mass in the outer "
            f"10% of r_max={grid.r_max}", TruncationWarning, stacklevel=2)
    value = 1.0 / gap
    if return_info:
        return value, {"outer_fraction": frac, "truncated": frac > 0.01, "lambda_min": gap}
    return value


def poincare_full_angular_estimate(sigma, grid):
    """Poincare constant over all (not only radial) ``g`` on a 2D Cartesian grid."""
    if not isinstance(grid, CartesianRGrid):
        raise TypeError("full-angular estimate needs a CartesianRGrid")
    op = assemble_cartesian(grid, ModelParams(d=2, alpha=sigma))
    iso = type(op)(op.entries, op.grid, op.alpha, op.b, op.d, op.stiffness_iso,
                   op.stiffness_iso, op.volumes, op.weight)
    vals, _ = low_spectrum(iso, k=3)
    return 1.0 / float(vals[1])


@dataclass
class SpectralReport:
    """Spectral diagnostics with grid provenance.

    Attributes
    ----------
    gap : float
        Smallest nonzero eigenvalue of ``-L`` in X_alpha.
    kernel_residual : float
        ``||L_h p||/||p||`` for the cell-averaged profile.
    poincare_best : float
        Rayleigh-estimated radial constant at ``sigma``.
    poincare_closed_form : float
        Closed-form constant at ``sigma``.
    grid_meta : dict
        Grid, parameters and auxiliary diagnostics.
    """

    gap: float
    kernel_residual: float
    poincare_best: float
    poincare_closed_form: float
    grid_meta: dict = field(default_factory=dict)

    def within_bound(self, slack=0.02):
        return self.poincare_best <= self.poincare_closed_form * (1.0 + slack)

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def spectral_report(params, grid, sigma=None, near_zero=None):
    """Build a :class:`SpectralReport` for ``params.alpha`` and Poincare exponent ``sigma``."""
    sigma = params.alpha if sigma is None else sigma
    op = assemble_radial(grid, params)
    gap, vals, f = spectral_gap(op, return_spectrum=True)
    tol = 0.5 * gap if near_zero is None else near_zero
    p = 1.0 / op.weight
    f0 = f[:, 0] / np.sum(op.volumes * f[:, 0])
    p0 = p / np.sum(op.volumes * p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        best, info = poincare_best_estimate(sigma, grid.d, grid, return_info=True)
    br = poincare_branches(sigma, grid.d)
    meta = {
        "grid": grid.meta(),
        "alpha": params.alpha,
        "sigma": sigma,
        "eigenvalues": [float(v) for v in vals],
        "near_zero_count": int(np.sum(np.abs(vals) < tol)),
        "kernel_eigvec_rel_error": float(np.max(np.abs(f0 - p0)) / np.max(np.abs(p0))),
        "branches": br,
        "rescaled_constant": poincare_rescaled_constant(sigma, grid.d),
        "essential_edge": essential_spectrum_edge(sigma, grid.d),
        "optimizer_outer_fraction": info["outer_fraction"],
        "truncation_warning": info["truncated"],
    }
    return SpectralReport(gap, kernel_residual(op), best, poincare_closed_form(sigma, grid.d), meta)
