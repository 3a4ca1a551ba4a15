import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polyturb.core_types import (CartesianRGrid, ModelParams, NonNormalizable, RadialGrid,
                                 UnsupportedDimension, WeightedField, ab_matrix, cauchy_profile,
                                 derive_alpha, dimension_constant, grid_from_meta,
                                 ground_state_residual, normalizing_constant, radial_cdf,
                                 sample_radii, sample_radius, sphere_area, stretch_index,
                                 weighted_l2_norm)
from polyturb.particles import ab_divergence

# 30-digit mpmath values
C2 = 0.27219826128795026631
C3 = 1.1613792481619211363
Z_2_2 = 6.2831853071795864769
Z_3_3 = 6.9788641996388795342
Z_17_3 = 79.573977172098051516


def test_dimension_constants():
    assert dimension_constant(2) == pytest.approx(C2, rel=1e-15)
    assert dimension_constant(3) == pytest.approx(C3, rel=1e-15)
    assert stretch_index(2) == 2 and stretch_index(3) == 1
    with pytest.raises(UnsupportedDimension):
        dimension_constant(4)


def test_normalizing_constant_against_quadrature_oracle():
    assert normalizing_constant(2.0, 2) == pytest.approx(Z_2_2, rel=1e-13)
    assert normalizing_constant(3.0, 3) == pytest.approx(Z_3_3, rel=1e-13)
    assert normalizing_constant(1.7, 3) == pytest.approx(Z_17_3, rel=1e-11)


@pytest.mark.parametrize("alpha,d", [(1.0, 2), (0.8, 2), (1.5, 3)])
def test_non_normalizable(alpha, d):
    with pytest.raises(NonNormalizable):
        normalizing_constant(alpha, d)
    with pytest.raises(NonNormalizable):
        radial_cdf(1.0, alpha, d)


def test_radial_cdf_closed_value():
    # P(|r| <= 2) for alpha = 2, d = 2 is 1 - 1/3
    assert radial_cdf(2.0, 2.0, 2) == pytest.approx(2.0 / 3.0, rel=1e-14)


def test_params_derived_quantities():
    p = ModelParams(d=2, alpha=2.0, zeta=1.0, tau=0.5)
    assert p.b == 2
    assert p.c_d == pytest.approx(C2)
    assert p.alpha == pytest.approx(derive_alpha(p.zeta, p.c3, 2), rel=1e-14)
    assert p.beta == 0.5
    assert p.relax_rate == pytest.approx(1.0 / (1.0 * 2.0 * 0.5))
    assert p.sigma_sq * p.beta == pytest.approx(1.0 / p.alpha, rel=1e-14)
    q = p.replace(alpha=3.0)
    assert q.alpha == 3.0 and q.c3 != p.c3
    assert ModelParams(d=3, alpha=2.0).b == 1


@pytest.mark.parametrize("kw", [dict(alpha=-1.0), dict(alpha=2.0, zeta=0.0),
                                dict(alpha=2.0, tau=-1.0), dict(alpha=2.0, b=1)])
def test_params_rejects_invalid(kw):
    with pytest.raises(ValueError):
        ModelParams(d=2, **kw)


def test_sphere_area():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


vec = st.floats(-50, 50, allow_nan=False)


@given(st.integers(2, 3), st.floats(0.05, 20.0), st.lists(vec, min_size=3, max_size=3))
def test_ground_state_identity(d, alpha, r):
    r = np.array(r[:d])
    res = ground_state_residual(r, alpha, stretch_index(d))
    scale = max(1.0, float(np.linalg.norm(r)) * cauchy_profile(r[None], alpha)[0] * alpha)
    assert np.max(np.abs(res)) <= 1e-12 * scale


@given(st.integers(2, 3), st.lists(vec, min_size=3, max_size=3))
def test_ab_matrix_spectrum(d, r):
    r = np.array(r[:d])
    b = stretch_index(d)
    a = ab_matrix(r, b)
    s = float(r @ r)
    assert np.allclose(a, a.T)
    w = np.linalg.eigvalsh(a)
    assert w[0] == pytest.approx(s, abs=1e-9 * max(1.0, s))
    assert np.allclose(a @ r, s * r, atol=1e-9 * max(1.0, s) * (1 + np.linalg.norm(r)))


@given(st.integers(2, 3), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_ab_matrix_divergence_free(d, r):
    r = np.array(r[:d])
    div = ab_divergence(r, stretch_index(d))
    assert np.max(np.abs(div)) < 1e-6


@given(st.floats(1.05, 10.0), st.floats(1e-6, 1 - 1e-6))
def test_sample_radius_inverts_cdf(alpha, u):
    v = sample_radius(u, alpha)
    assert radial_cdf(v, alpha, 2) == pytest.approx(u, abs=1e-9)


def test_sample_radii_3d_distribution():
    rng = np.random.default_rng(1)
    v = sample_radii(rng, 200_000, 2.5, 3)
    for q in (0.5, 1.0, 3.0):
        assert np.mean(v <= q) == pytest.approx(radial_cdf(q, 2.5, 3), abs=4e-3)


def test_grids_and_meta_roundtrip():
    g = RadialGrid(10.0, 100, 2)
    assert np.sum(g.weights) == pytest.approx(math.pi * 100.0, rel=1e-3)
    c = CartesianRGrid(5.0, 11)
    assert c.n == 121
    assert np.sum(c.weights) == pytest.approx(100.0)
    assert grid_from_meta(g.meta()) == g and grid_from_meta(c.meta()) == c
    with pytest.raises(ValueError):
        CartesianRGrid(5.0, 10)
    with pytest.raises(ValueError):
        RadialGrid(-1.0, 10)


def test_weighted_field_validation_and_norm():
    g = RadialGrid(10.0, 50, 2)
    p = cauchy_profile(g.radii, 2.0)
    f = WeightedField(p, 2.0, g, None, True)
    # ||p||^2 in X_alpha is the quadrature of the profile itself
    assert weighted_l2_norm(f) ** 2 == pytest.approx(np.sum(g.weights * p))
    with pytest.raises(ValueError):
        WeightedField(np.ones(49), 2.0, g)
    with pytest.raises(ValueError):
        WeightedField(-p, 2.0, g, None, True)
    with pytest.raises(ValueError):
        WeightedField(np.full(50, np.nan), 2.0, g)
