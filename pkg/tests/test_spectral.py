import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polyturb.coil_stretch_operator import assemble_cartesian, assemble_radial
from polyturb.core_types import CartesianRGrid, ModelParams, RadialGrid
from polyturb.spectral import (TruncationWarning, essential_spectrum_edge, low_spectrum,
                               poincare_best_estimate, poincare_branches, poincare_closed_form,
                               poincare_full_angular_estimate, poincare_rayleigh,
                               poincare_reference_constant, poincare_rescaled_constant,
                               spectral_gap, spectral_report)

# Rayleigh-Ritz oracle: 40 Legendre polynomials in v^2 on [0, R], Gauss quadrature
GAP_A2_R20 = 1.0249506811
GAP_A2_R10 = 1.3629380415


def test_closed_form_values():
    assert poincare_closed_form(2.0, 2) == pytest.approx((5 + 2 * math.sqrt(6)) / 4, rel=1e-14)
    assert poincare_closed_form(1.5, 2) == pytest.approx(2.0, rel=1e-14)
    assert poincare_closed_form(3.0, 2) == pytest.approx((math.sqrt(2) + 1) ** 2 / 8, rel=1e-14)
    br = poincare_branches(2.0, 2)
    assert br["lower"] == pytest.approx(0.5) and br["upper"] == pytest.approx(2.4747448713915890)
    with pytest.raises(ValueError):
        poincare_closed_form(1.0, 2)


def test_branch_formulas_relation():
    # on the upper branch the closed form is half the unrescaled constant
    for s in (2.0, 3.0, 5.0):
        assert poincare_closed_form(s, 2) == pytest.approx(0.5 * poincare_reference_constant(s, 2))
        assert poincare_rescaled_constant(s, 2) == pytest.approx(4 * poincare_closed_form(s, 2))


@given(st.floats(1.01, 30.0))
def test_closed_form_finite_and_continuous(s):
    c = poincare_closed_form(s, 2)
    assert math.isfinite(c) and c > 0
    if abs(s - 2.0) > 1e-3:
        assert poincare_closed_form(s + 1e-7, 2) == pytest.approx(c, rel=1e-4)


@pytest.mark.parametrize("r_max,ref", [(20.0, GAP_A2_R20), (10.0, GAP_A2_R10)])
def test_gap_matches_ritz_oracle(r_max, ref):
    gap = spectral_gap(assemble_radial(RadialGrid(r_max, 1600, 2), ModelParams(d=2, alpha=2.0)))
    assert gap == pytest.approx(ref, rel=1e-5)


def test_gap_refinement_and_kernel():
    p = ModelParams(d=2, alpha=2.0)
    g1 = spectral_gap(assemble_radial(RadialGrid(20.0, 512, 2), p))
    g2 = spectral_gap(assemble_radial(RadialGrid(20.0, 1024, 2), p))
    assert g1 > 0 and abs(g1 - g2) / g2 < 0.01
    vals, f = low_spectrum(assemble_radial(RadialGrid(20.0, 512, 2), p), k=3)
    assert abs(vals[0]) < 1e-10 and vals[1] > 0.5


def test_cartesian_spectrum_kernel():
    op = assemble_cartesian(CartesianRGrid(8.0, 41), ModelParams(d=2, alpha=2.0))
    vals, f = low_spectrum(op, k=3)
    assert abs(vals[0]) < 1e-8
    assert vals[1] > 0.1
    p = f[:, 0] / np.sum(op.volumes * f[:, 0])
    q = (1 / op.weight) / np.sum(op.volumes / op.weight)
    assert np.max(np.abs(p - q)) / np.max(q) < 1e-6


def test_best_estimate_refinement_and_bound():
    for s in (1.5, 2.0, 3.0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            a = poincare_best_estimate(s, 2, RadialGrid(20.0, 512, 2))
            b = poincare_best_estimate(s, 2, RadialGrid(20.0, 1024, 2))
        assert abs(a - b) / b < 0.005
        assert a <= poincare_closed_form(s, 2) * 1.02


def test_truncation_grows_below_d():
    # the constant at sigma = 1.5 keeps growing with r_max (essential spectrum below 1/2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        a = poincare_best_estimate(1.5, 2, RadialGrid(20.0, 512, 2))
        b = poincare_best_estimate(1.5, 2, RadialGrid(50.0, 1280, 2))
    assert b > a * 1.3
    assert b < 1.0 / essential_spectrum_edge(1.5, 2)


def test_truncation_warning_emitted():
    with pytest.warns(TruncationWarning):
        poincare_best_estimate(1.05, 2, RadialGrid(10.0, 256, 2))


@pytest.mark.filterwarnings("ignore::polyturb.spectral.TruncationWarning")
@given(st.integers(0, 2 ** 31 - 1), st.floats(-100, 100))
def test_rayleigh_shift_invariance_and_variational_bound(seed, shift):
    grid = RadialGrid(15.0, 150, 2)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(4)
    v = grid.radii
    g = c[0] * np.tanh(v) + c[1] * v / (1 + v) + c[2] * np.exp(-v) + c[3] * np.cos(v)
    q = poincare_rayleigh(g, 2.0, grid)
    assert poincare_rayleigh(g + shift, 2.0, grid) == pytest.approx(q, rel=1e-6)
    assert q <= poincare_best_estimate(2.0, 2, grid) * (1 + 1e-9)


@pytest.mark.filterwarnings("ignore::polyturb.spectral.TruncationWarning")
def test_full_angular_not_below_radial_sector():
    full = poincare_full_angular_estimate(2.0, CartesianRGrid(10.0, 41))
    radial = poincare_best_estimate(2.0, 2, RadialGrid(10.0, 512, 2))
    assert full >= 0.95 * radial


def test_report_json(tmp_path):
    rep = spectral_report(ModelParams(d=2, alpha=2.0), RadialGrid(20.0, 256, 2))
    assert rep.gap > 0 and rep.within_bound()
    assert rep.grid_meta["near_zero_count"] == 1
    path = tmp_path / "rep.json"
    rep.to_json(path)
    data = json.loads(path.read_text())
    assert set(data) == {"gap", "kernel_residual", "poincare_best", "poincare_closed_form",
                         "grid_meta"}
    assert data["grid_meta"]["grid"] == {"kind": "radial", "r_max": 20.0, "n": 256, "d": 2}
