"""Parameters, grids, weighted fields and the Cauchy-type equilibrium profile.

Every other module builds on the objects defined here.  Physics is carried
in float64 throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import math

import numpy as np
from scipy import integrate, special

__all__ = [
    "UnsupportedDimension",
    "NonNormalizable",
    "ModelParams",
    "RadialGrid",
    "CartesianRGrid",
    "WeightedField",
    "dimension_constant",
    "derive_alpha",
    "stretch_index",
    "sphere_area",
    "ab_matrix",
    "cauchy_profile",
    "normalizing_constant",
    "radial_cdf",
    "weighted_l2_norm",
    "ground_state_residual",
    "sample_radius",
    "sample_radii",
]


class UnsupportedDimension(ValueError):
    """Raised for a spatial dimension other than 2 or 3."""


class NonNormalizable(ValueError):
    """Raised when (1+|r|^2/2)^(-alpha) is not integrable on R^d."""


def _check_dim(d):
    if d not in (2, 3):
        raise UnsupportedDimension(f"dimension {d} not supported (use 2 or 3)")


def dimension_constant(d):
    """Limit constant of the small-scale stretching covariance.

    Parameters
    ----------
    d : int
        Spatial dimension, 2 or 3.

    Returns
    -------
    float
        ``pi*ln2/8`` for d=2 and ``8*pi*ln2/15`` for d=3.
    """
    _check_dim(d)
    if d == 2:
        return math.pi * math.log(2.0) / 8.0
    return 8.0 * math.pi * math.log(2.0) / 15.0


def stretch_index(d):
    """Index b of the stretching matrix: 2 in 2D, 1 in 3D."""
    _check_dim(d)
    return 2 if d == 2 else 1


def derive_alpha(zeta, c3, d):
    """Tail exponent ``alpha = 1/(zeta*c_d*c3**2)``."""
    if not (zeta > 0 and c3 > 0):
        raise ValueError(f"zeta and c3 must be positive, got zeta={zeta}, c3={c3}")
    return 1.0 / (zeta * dimension_constant(d) * c3 * c3)


def sphere_area(d):
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class ModelParams:
    """Physical and scaling parameters of the polymer model.

    Attributes
    ----------
    d : int
        Spatial dimension (2 or 3).
    alpha : float
        Tail exponent of the stationary elongation law.
    zeta : float
        Ratio beta/tau of relaxation time to turbulent time scale.
    tau : float
        Dominant turbulent time scale.
    b : int
        Stretching matrix index, tied to ``d``.
    c3 : float
        Turbulence intensity constant.
    c_d : float
        Dimension constant, see :func:`dimension_constant`.
    gamma_coef : float
        Thermal coefficient, fixed to 1.
    """

    d: int
    alpha: float
    zeta: float = 1.0
    tau: float = 1.0
    b: int = field(default=0)
    c3: float = field(default=0.0)
    c_d: float = field(default=0.0)
    gamma_coef: float = 1.0

    def __post_init__(self):
        _check_dim(self.d)
        if self.b == 0:
            object.__setattr__(self, "b", stretch_index(self.d))
        if self.c_d == 0.0:
            object.__setattr__(self, "c_d", dimension_constant(self.d))
        if self.c3 == 0.0 and self.alpha > 0 and self.zeta > 0:
            object.__setattr__(self, "c3", 1.0 / math.sqrt(self.zeta * self.c_d * self.alpha))
        if self.b != stretch_index(self.d):
            raise ValueError(f"b={self.b} inconsistent with d={self.d}")
        if abs(self.c_d - dimension_constant(self.d)) > 1e-15 * self.c_d:
            raise ValueError("c_d does not match the dimension constant")
        for name in ("alpha", "zeta", "tau", "c3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gamma_coef != 1.0:
            raise ValueError("gamma_coef is fixed to 1")

    @classmethod
    def from_turbulence(cls, d, zeta, tau, c3):
        """Build parameters with ``alpha`` derived from ``(zeta, c3, d)``."""
        return cls(d=d, alpha=derive_alpha(zeta, c3, d), zeta=zeta, tau=tau, c3=c3)

    def replace(self, **changes):
        """Return a copy with some fields changed; derived fields are recomputed."""
        data = asdict(self)
        data.update(changes)
        if "alpha" in changes and "c3" not in changes:
            data["c3"] = 0.0
        if "d" in changes:
            data["b"] = 0
            data["c_d"] = 0.0
        return ModelParams(**data)

    @property
    def beta(self):
        """Polymer relaxation time ``zeta*tau``."""
        return self.zeta * self.tau

    @property
    def a_tau(self):
        """Turbulent intensity ``c3/sqrt(tau)``."""
        return self.c3 / math.sqrt(self.tau)

    @property
    def k_t(self):
        """Stretching diffusivity ``c_d*a_tau**2``."""
        return self.c_d * self.a_tau ** 2

    @property
    def sigma_sq(self):
        """Thermal noise variance ``C_2/beta`` with ``C_2 = gamma*zeta*c_d*c3**2``."""
        return self.gamma_coef * self.zeta * self.c_d * self.c3 ** 2 / self.beta

    @property
    def relax_rate(self):
        """Prefactor ``1/(zeta*alpha*tau)`` of the coil-stretch operator."""
        return 1.0 / (self.zeta * self.alpha * self.tau)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RadialGrid:
    """Cell-centred grid on ``[0, r_max]`` for radially symmetric functions.

    Attributes
    ----------
    r_max : float
        Truncation radius.
    n : int
        Number of cells.
    d : int
        Dimension of the underlying elongation space.
    """

    r_max: float
    n: int
    d: int = 2

    def __post_init__(self):
        _check_dim(self.d)
        if not (self.r_max > 0 and self.n >= 2):
            raise ValueError(f"degenerate radial grid r_max={self.r_max}, n={self.n}")

    @property
    def h(self):
        return self.r_max / self.n

    @property
    def nodes(self):
        return (np.arange(self.n) + 0.5) * self.h

    @property
    def faces(self):
        """Interior cell faces ``h, 2h, ..., (n-1)h``."""
        return np.arange(1, self.n) * self.h

    @property
    def weights(self):
        """Midpoint quadrature weights ``|S^{d-1}| v^{d-1} h``."""
        return sphere_area(self.d) * self.nodes ** (self.d - 1) * self.h

    @property
    def radii(self):
        return self.nodes

    def meta(self):
        return {"kind": "radial", "r_max": self.r_max, "n": self.n, "d": self.d}


@dataclass(frozen=True)
class CartesianRGrid:
    """Uniform cell-centred grid on ``[-r_max, r_max]^2``.

    ``n_per_axis`` is odd so that the origin is a cell centre.
    """

    r_max: float
    n_per_axis: int
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise UnsupportedDimension("Cartesian elongation grids are 2D only")
        if self.n_per_axis % 2 != 1 or self.n_per_axis < 3:
            raise ValueError(f"n_per_axis must be odd and >= 3, got {self.n_per_axis}")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")

    @property
    def h(self):
        return 2.0 * self.r_max / self.n_per_axis

    @property
    def spacing(self):
        return self.h

    @property
    def axis(self):
        return -self.r_max + (np.arange(self.n_per_axis) + 0.5) * self.h

    @property
    def points(self):
        """Cell centres as an array of shape (n, n, 2), indexing ``ij``."""
        a = self.axis
        r1, r2 = np.meshgrid(a, a, indexing="ij")
        return np.stack([r1, r2], axis=-1)

    @property
    def radii(self):
        p = self.points
        return np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2).ravel()

    @property
    def weights(self):
        return np.full(self.n_per_axis ** 2, self.h ** 2)

    @property
    def n(self):
        return self.n_per_axis ** 2

    def meta(self):
        return {"kind": "cartesian", "r_max": self.r_max, "n_per_axis": self.n_per_axis, "d": 2}


def grid_from_meta(meta):
    """Inverse of ``grid.meta()``."""
    if meta["kind"] == "radial":
        return RadialGrid(float(meta["r_max"]), int(meta["n"]), int(meta["d"]))
    if meta["kind"] == "cartesian":
        return CartesianRGrid(float(meta["r_max"]), int(meta["n_per_axis"]))
    raise ValueError(f"unknown grid kind {meta['kind']!r}")


@dataclass(frozen=True, eq=False)
class WeightedField:
    """Gridded density in r, optionally carried over a torus grid in x.

    ``values`` has shape ``x_shape + (grid.n,)``; the last axis runs over
    the (flattened) elongation grid.
    """

    values: np.ndarray
    alpha: float
    grid: RadialGrid | CartesianRGrid
    x_shape: tuple | None = None
    nonnegative: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        expect = (tuple(self.x_shape) if self.x_shape else ()) + (self.grid.n,)
        if v.shape != expect:
            raise ValueError(f"values shape {v.shape} does not match grid/x_shape {expect}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.nonnegative and v.size and v.min() < -1e-12 * max(v.max(), 0.0):
            raise ValueError("field flagged nonnegative has negative values")

    def with_values(self, values):
        return WeightedField(values, self.alpha, self.grid, self.x_shape, self.nonnegative)

    @property
    def weight(self):
        return (1.0 + 0.5 * self.grid.radii ** 2) ** self.alpha

    def mass(self):
        """``int f dr``, averaged over x when an x-grid is present."""
        m = self.values @ self.grid.weights
        return float(np.mean(m)) if self.x_shape else float(m)


def ab_matrix(r, b):
    """Stretching diffusion matrix ``(b+1)|r|^2 I - b r r^T``.

    Accepts a single vector or a batch with the vector on the last axis.
    """
    r = np.asarray(r, dtype=float)
    d = r.shape[-1]
    s = np.sum(r * r, axis=-1)[..., None, None]
    return (b + 1) * s * np.eye(d) - b * r[..., :, None] * r[..., None, :]


def cauchy_profile(r, alpha):
    """Unnormalised profile ``(1+|r|^2/2)^(-alpha)``.

    ``r`` is either a radius array or a batch of vectors (last axis);
    scalars and 1D arrays are treated as radii.
    """
    r = np.asarray(r, dtype=float)
    s = r * r if r.ndim <= 1 else np.sum(r * r, axis=-1)
    return (1.0 + 0.5 * s) ** (-alpha)


def normalizing_constant(alpha, d):
    """``Z = int_{R^d} (1+|r|^2/2)^(-alpha) dr`` by adaptive quadrature.

    The radial integral is mapped to ``w = 1/(1+v^2/2)`` on ``[0, 1]``
    where it becomes an algebraic-weight integral handled by QUADPACK.

    Raises
    ------
    NonNormalizable
        When ``alpha <= d/2``.
    """
    _check_dim(d)
    if alpha <= d / 2.0:
        raise NonNormalizable(f"alpha={alpha} <= d/2={d / 2}: diverges")
    val, _ = integrate.quad(
        lambda w: 1.0, 0.0, 1.0, weight="alg", wvar=(alpha - d / 2.0 - 1.0, d / 2.0 - 1.0),
        epsabs=0.0, epsrel=1e-13,
    )
    return sphere_area(d) * 2.0 ** (d / 2.0 - 1.0) * val


def radial_cdf(v, alpha, d):
    """Probability that ``|r| <= v`` under the normalised profile."""
    if alpha <= d / 2.0:
        raise NonNormalizable(f"alpha={alpha} <= d/2={d / 2}: diverges")
    w = 1.0 / (1.0 + 0.5 * np.asarray(v, dtype=float) ** 2)
    return 1.0 - special.betainc(alpha - d / 2.0, d / 2.0, w)


def weighted_l2_norm(f):
    """Weighted L2 norm with weight ``(1+|r|^2/2)^alpha``.

    For fields over a torus grid the x-integral is the average over cells
    (unit x-measure), giving the H_alpha norm; otherwise the X_alpha norm.
    """
    q = (f.values ** 2) @ (f.grid.weights * f.weight)
    if f.x_shape:
        q = np.mean(q)
    return float(np.sqrt(q))


def ground_state_residual(r, alpha, b):
    """Evaluate ``alpha r P + (I + A_b(r)/2) grad P`` with ``P`` the profile.

    The identity ``A_b(r) r = |r|^2 r`` makes this vanish; the function
    evaluates the full matrix product so that it checks the identity
    rather than assuming it.
    """
    r = np.asarray(r, dtype=float)
    s = np.sum(r * r, axis=-1)
    p = (1.0 + 0.5 * s) ** (-alpha)
    grad = (-alpha * (1.0 + 0.5 * s) ** (-alpha - 1.0))[..., None] * r
    a = ab_matrix(r, b)
    dgrad = grad + 0.5 * np.einsum("...ij,...j->...i", a, grad)
    return alpha * p[..., None] * r + dgrad


def sample_radius(u, alpha, d=2):
    """Inverse-CDF radius sample of the normalised profile in 2D.

    ``v = sqrt(2((1-u)^(1/(1-alpha)) - 1))``.
    """
    if d != 2:
        raise UnsupportedDimension("closed-form inverse only in 2D; use sample_radii")
    if alpha <= 1.0:
        raise NonNormalizable(f"alpha={alpha} <= 1: diverges")
    u = np.asarray(u, dtype=float)
    return np.sqrt(2.0 * ((1.0 - u) ** (1.0 / (1.0 - alpha)) - 1.0))


def sample_radii(rng, n, alpha, d):
    """Draw ``n`` radii of the normalised profile in dimension ``d``.

    In 3D the inverse regularised incomplete beta function replaces the
    closed form.
    """
    u = rng.random(n)
    if d == 2:
        return sample_radius(u, alpha, 2)
    if alpha <= d / 2.0:
        raise NonNormalizable(f"alpha={alpha} <= d/2={d / 2}: diverges")
    w = special.betaincinv(alpha - d / 2.0, d / 2.0, 1.0 - u)
    return np.sqrt(2.0 * (1.0 / w - 1.0))
