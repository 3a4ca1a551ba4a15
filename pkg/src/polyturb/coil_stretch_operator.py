"""Discretisations of the coil-stretch operator on truncated elongation grids.

The operator is written in ground-state form

    L f = div( P (I + A_b/2) grad(f / P) ),   P = (1+|r|^2/2)^(-alpha),

which is algebraically the drift-diffusion form ``div(alpha r f + grad f +
A_b grad f / 2)``.  Both grids use the factorisation ``L_h = V^-1 S W``, where
``V`` holds the cell volumes, ``W = diag(1/P)`` and ``S`` is a symmetric
weighted graph Laplacian.  This gives exact mass conservation, exact
self-adjointness in X_alpha and the exact discrete kernel ``P`` at nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .core_types import CartesianRGrid, RadialGrid, UnsupportedDimension, WeightedField, sphere_area

__all__ = [
    "SolvabilityViolated",
    "SingularSystem",
    "OperatorMatrix",
    "assemble_radial",
    "assemble_cartesian",
    "stretching_matrix",
    "dirichlet_form",
    "dirichlet_lower_bound",
    "gradient_energy",
    "gradient_energy_matrix",
    "kernel_vector",
    "cell_average",
    "solve_fredholm",
    "write_operator_coo",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class SolvabilityViolated(ValueError):
    """Right-hand side of the Fredholm problem has nonzero integral."""


class SingularSystem(ValueError):
    """Kernel of the operator was not removed before a solve."""


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Sparse discrete coil-stretch operator.

    Attributes
    ----------
    entries : scipy.sparse.csr_matrix
        ``L_h = V^-1 S W`` acting on nodal values of ``f``.
    grid : RadialGrid or CartesianRGrid
    alpha : float
    b : int
    d : int
    stiffness : scipy.sparse.csr_matrix
        Symmetric ``S`` (negative semidefinite, zero row sums).
    stiffness_iso : scipy.sparse.csr_matrix
        ``S`` built from the isotropic coefficient ``P (1+|r|^2/2)``.
    volumes : ndarray
        Cell volumes ``V``.
    weight : ndarray
        ``(1+|r|^2/2)^alpha`` at nodes.
    """

    entries: sparse.csr_matrix
    grid: RadialGrid | CartesianRGrid
    alpha: float
    b: int
    d: int
    stiffness: sparse.csr_matrix
    stiffness_iso: sparse.csr_matrix
    volumes: np.ndarray
    weight: np.ndarray

    @property
    def form(self):
        return {"kind": "ground-state flux", "grid": self.grid.meta(), "alpha": self.alpha, "b": self.b}

    def apply(self, values):
        return self.entries @ values

    def inner(self, f, g):
        """X_alpha inner product of nodal vectors."""
        return float(np.sum(self.volumes * self.weight * f * g))


def _laplacian(n, i, j, w):
    """Symmetric graph Laplacian ``-sum_e w_e (e_i - e_j)(e_i - e_j)^T``."""
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([w, w, -w, -w])
    return sparse.csr_matrix(sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def _finish(grid, alpha, b, d, i, j, w, w_iso):
    n = grid.n
    s = _laplacian(n, i, j, w)
    s_iso = _laplacian(n, i, j, w_iso) if w_iso is not None else s
    vol = np.asarray(grid.weights, dtype=float)
    wt = (1.0 + 0.5 * grid.radii ** 2) ** alpha
    entries = sparse.diags(1.0 / vol) @ s @ sparse.diags(wt)
    return OperatorMatrix(sparse.csr_matrix(entries), grid, float(alpha), b, d,
                          s, s_iso, vol, wt)


def _face_conductance(v0, v1, alpha):
    """Harmonic mean of ``(1+v^2/2)^(1-alpha)`` over each ``[v0, v1]``."""
    mid = 0.5 * (v0 + v1)[:, None]
    half = 0.5 * (v1 - v0)[:, None]
    pts = mid + half * _GL_X[None, :]
    inv = np.sum((1.0 + 0.5 * pts ** 2) ** (alpha - 1.0) * (0.5 * _GL_W[None, :]), axis=1)
    return 1.0 / inv


def assemble_radial(grid, params):
    """Radial reduction ``v^(1-d) d/dv( v^(d-1) (1+v^2/2)^(1-alpha) d/dv(f (1+v^2/2)^alpha) )``.

    Parameters
    ----------
    grid : RadialGrid
    params : ModelParams
        Supplies ``alpha`` and ``b``; ``grid.d`` must equal ``params.d``.

    Returns
    -------
    OperatorMatrix
        No-flux at ``r_max``; the origin face has zero area.
    """
    if not isinstance(grid, RadialGrid):
        raise TypeError("assemble_radial needs a RadialGrid")
    if grid.d != params.d:
        raise ValueError("grid and parameter dimensions differ")
    if grid.nodes[0] >= 0.1 or grid.n < 4:
        raise ValueError("degenerate grid: first node must lie below 0.1")
    v = grid.nodes
    faces = grid.faces
    c = _face_conductance(v[:-1], v[1:], params.alpha)
    k = sphere_area(grid.d) * faces ** (grid.d - 1) * c / grid.h
    i = np.arange(grid.n - 1)
    return _finish(grid, params.alpha, params.b, params.d, i, i + 1, k, None)


def _edge_list(grid):
    n = grid.n_per_axis
    idx = np.arange(n * n).reshape(n, n)
    edges = []
    for d1, d2 in ((1, 0), (0, 1), (1, 1), (1, -1)):
        i_lo, i_hi = 0, n - d1
        j_lo, j_hi = max(0, -d2), n - max(0, d2)
        a = idx[i_lo:i_hi, j_lo:j_hi]
        b = idx[i_lo + d1:i_hi + d1, j_lo + d2:j_hi + d2]
        edges.append(((d1, d2), a.ravel(), b.ravel()))
    return edges


def assemble_cartesian(grid, params):
    """Full anisotropic operator on a 2D Cartesian cell-centred grid.

    The coefficient tensor ``T = P (I + A_b/2)`` is diagonally dominant,
    so it splits into nonnegative weights along the lattice directions
    (1,0), (0,1), (1,1), (1,-1).  The result is a nine-point M-matrix.

    Raises
    ------
    UnsupportedDimension
        If ``params.d`` is not 2.
    """
    if params.d != 2:
        raise UnsupportedDimension("Cartesian assembly is 2D only")
    if not isinstance(grid, CartesianRGrid):
        raise TypeError("assemble_cartesian needs a CartesianRGrid")
    alpha, b = params.alpha, params.b
    pts = grid.points.reshape(-1, 2)
    h = grid.h
    ii, jj, ww, wi = [], [], [], []
    for (d1, d2), a, c in _edge_list(grid):
        m = pts[a] + 0.5 * h * np.array([d1, d2], dtype=float)
        s = np.sum(m * m, axis=1)
        p = (1.0 + 0.5 * s) ** (-alpha)
        t11 = p * (1.0 + 0.5 * (b + 1) * s - 0.5 * b * m[:, 0] ** 2)
        t22 = p * (1.0 + 0.5 * (b + 1) * s - 0.5 * b * m[:, 1] ** 2)
        t12 = -p * 0.5 * b * m[:, 0] * m[:, 1]
        if (d1, d2) == (1, 0):
            w = t11 - np.abs(t12)
            w_iso = p * (1.0 + 0.5 * s)
        elif (d1, d2) == (0, 1):
            w = t22 - np.abs(t12)
            w_iso = p * (1.0 + 0.5 * s)
        elif (d1, d2) == (1, 1):
            w = np.maximum(t12, 0.0)
            w_iso = np.zeros_like(w)
        else:
            w = np.maximum(-t12, 0.0)
            w_iso = np.zeros_like(w)
        ii.append(a)
        jj.append(c)
        ww.append(w)
        wi.append(w_iso)
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    return _finish(grid, alpha, b, 2, i, j, np.concatenate(ww), np.concatenate(wi))


def stretching_matrix(grid, grad_u):
    """Conservative first-order upwind discretisation of ``div(M r f)``.

    Face velocities are ``(M r_face) . n``; with ``trace(M) = 0`` the face
    fluxes of every interior cell sum to zero, so constants are preserved
    away from the outer boundary, which is no-flux.
    """
    if not isinstance(grid, CartesianRGrid):
        raise TypeError("stretching needs a CartesianRGrid")
    m = np.asarray(grad_u, dtype=float)
    n = grid.n_per_axis
    h = grid.h
    pts = grid.points.reshape(-1, 2)
    rows, cols, vals = [], [], []
    for axis, (_, a, c) in enumerate(_edge_list(grid)[:2]):
        face = 0.5 * (pts[a] + pts[c])
        un = face @ m[axis]
        flux_from_a = np.maximum(un, 0.0) / h
        flux_from_c = np.maximum(-un, 0.0) / h
        # (div F)_a += F/h outward; F = un*f_up
        rows += [a, c, a, c]
        cols += [a, a, c, c]
        vals += [flux_from_a, -flux_from_a, -flux_from_c, flux_from_c]
    u = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n * n, n * n))
    return sparse.csr_matrix(u)


def _as_values(op, f):
    return f.values if isinstance(f, WeightedField) else np.asarray(f, dtype=float)


def dirichlet_form(op, f):
    """``(-L f, f)`` in X_alpha, i.e. ``-(W f)^T S (W f)``."""
    u = op.weight * _as_values(op, f)
    return float(-(u @ (op.stiffness @ u)))


def dirichlet_lower_bound(op, f):
    """Discrete ``int (1+|r|^2/2)^(1-alpha) |grad(f (1+|r|^2/2)^alpha)|^2 dr``."""
    u = op.weight * _as_values(op, f)
    return float(-(u @ (op.stiffness_iso @ u)))


def gradient_energy_matrix(grid, exponent):
    """Negative semidefinite ``Q`` with ``-f^T Q f = int |grad f|^2 (1+|r|^2/2)^exponent dr``.

    Differences are taken along axis edges (Cartesian) or between
    neighbouring nodes (radial).
    """
    if isinstance(grid, RadialGrid):
        w = sphere_area(grid.d) * grid.faces ** (grid.d - 1) / grid.h \
            * (1.0 + 0.5 * grid.faces ** 2) ** exponent
        i = np.arange(grid.n - 1)
        return _laplacian(grid.n, i, i + 1, w)
    pts = grid.points.reshape(-1, 2)
    ii, jj, ww = [], [], []
    for _, a, c in _edge_list(grid)[:2]:
        m = 0.5 * (pts[a] + pts[c])
        ii.append(a)
        jj.append(c)
        ww.append((1.0 + 0.5 * np.sum(m * m, axis=1)) ** exponent)
    return _laplacian(grid.n, np.concatenate(ii), np.concatenate(jj), np.concatenate(ww))


def gradient_energy(op, f, exponent, matrix=None):
    """Discrete ``int |grad f|^2 (1+|r|^2/2)^exponent dr``; batched over leading axes."""
    v = _as_values(op, f)
    q = gradient_energy_matrix(op.grid, exponent) if matrix is None else matrix
    flat = v.reshape(-1, v.shape[-1])
    out = -np.sum(flat * (q @ flat.T).T, axis=1)
    return float(out[0]) if v.ndim == 1 else out.reshape(v.shape[:-1])


def kernel_vector(op):
    """Unit-mass discrete equilibrium ``P/int P`` at the nodes."""
    p = 1.0 / op.weight
    return p / np.sum(op.volumes * p)


def cell_average(grid, func, order=8):
    """Cell averages of a radial function ``func(|r|)`` (weighted by volume)."""
    if isinstance(grid, RadialGrid):
        pts = grid.nodes[:, None] + 0.5 * grid.h * _GL_X[None, :]
        w = _GL_W[None, :] * pts ** (grid.d - 1)
        vals = np.asarray(func(pts.ravel())).reshape(pts.shape)
        return np.sum(w * vals, axis=1) / np.sum(w, axis=1)
    x, wx = np.polynomial.legendre.leggauss(order)
    p = grid.points.reshape(-1, 2)
    h = grid.h
    acc = np.zeros(len(p))
    for a, wa in zip(x, wx):
        for c, wc in zip(x, wx):
            q = p + 0.5 * h * np.array([a, c])
            acc += 0.25 * wa * wc * func(np.sqrt(np.sum(q * q, axis=1)))
    return acc


def solve_fredholm(op, g, rtol=1e-10, project=True):
    """Solve ``L f = g`` for the mean-zero ``f``.

    Raises
    ------
    SolvabilityViolated
        If ``int g dr`` is not zero relative to ``int |g| dr``.
    SingularSystem
        If called with ``project=False`` (the kernel must be removed).
    """
    gv = _as_values(op, g)
    total = float(np.sum(op.volumes * gv))
    scale = float(np.sum(op.volumes * np.abs(gv)))
    if scale == 0.0:
        out = np.zeros_like(gv)
        return g.with_values(out) if isinstance(g, WeightedField) else out
    if abs(total) > rtol * scale:
        raise SolvabilityViolated(f"int g dr = {total:.3e} is not zero (relative {total / scale:.3e})")
    if not project:
        raise SingularSystem("the operator has a one-dimensional kernel; project out constants")
    n = op.grid.n
    pin = int(np.argmax(op.volumes / op.weight))
    keep = np.delete(np.arange(n), pin)
    s = sparse.csc_matrix(op.stiffness[keep][:, keep])
    rhs = (op.volumes * gv)[keep]
    u = np.zeros(n)
    u[keep] = spla.splu(s).solve(rhs)
    f = u / op.weight
    p = 1.0 / op.weight
    f = f - (np.sum(op.volumes * f) / np.sum(op.volumes * p)) * p
    return g.with_values(f) if isinstance(g, WeightedField) else f


def write_operator_coo(op, path):
    """Write ``L_h`` as ``row col value`` lines after a ``#``-prefixed header."""
    coo = op.entries.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# grid {op.grid.meta()}\n# alpha {op.alpha!r} b {op.b} d {op.d}\n")
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")
