import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from polyturb import particles as pt
from polyturb.core_types import ModelParams, ab_matrix, dimension_constant, radial_cdf
from polyturb.transport import ShearFlow
from polyturb.turbulence import build_modes

P2 = ModelParams(d=2, alpha=2.0)
C2 = dimension_constant(2)

# mpmath (50 digits) CDF of the FENE law at v=1, alpha=1/C2, b=10*C2, d=2
FENE_CDF_1 = 0.86969234046388511924
FENE_GAMMA = 2.1177545153860531124


@settings(max_examples=30)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.sampled_from([2, 3]))
def test_diffusion_sqrt_factorises(vec, d):
    b = 2 if d == 2 else 1
    r = np.array(vec[:d])[None, :]
    bm = pt.diffusion_sqrt(r, b)[0]
    target = np.eye(d) + 0.5 * ab_matrix(r, b)[0]
    assert np.allclose(bm @ bm.T, target, rtol=1e-10, atol=1e-10)


def test_ab_divergence_vanishes():
    for r in ([0.3, -1.2], [2.0, 5.0, -1.0]):
        b = 2 if len(r) == 2 else 1
        assert np.max(np.abs(pt.ab_divergence(np.array(r), b))) < 1e-6


def test_fene_law_oracle():
    alpha, b = 1.0 / C2, 10.0 * C2
    assert alpha * b / (2 + b) == pytest.approx(FENE_GAMMA, rel=1e-14)
    assert pt.fene_cdf(1.0, alpha, 2, b)[0] == pytest.approx(FENE_CDF_1, rel=1e-9)
    vals = pt.fene_cdf([0.0, 0.5, 1.0, math.sqrt(b)], alpha, 2, b)
    assert vals[0] == 0.0 and vals[-1] == pytest.approx(1.0) and np.all(np.diff(vals) > 0)


def test_fene_sampler_matches_cdf():
    alpha, b = 1.0 / C2, 10.0 * C2
    v = pt.sample_fene_radii(np.random.default_rng(0), 200_000, alpha, 2, b)
    assert v.max() < math.sqrt(b)
    grid = np.linspace(0.0, math.sqrt(b), 41)
    emp = np.searchsorted(np.sort(v), grid) / v.size
    # Kolmogorov bound at a 1e-3 level
    assert np.max(np.abs(emp - pt.fene_cdf(grid, alpha, 2, b))) < 1.95 / math.sqrt(v.size)


def test_equilibrium_initialisation_and_kuiper():
    ens = pt.init_ensemble(P2, 100_000, seed=7)
    ks = stats.kstest(ens.radii(), lambda v: radial_cdf(v, 2.0, 2))
    assert ks.pvalue > 1e-3
    ang = np.arctan2(ens.r_states[:, 1], ens.r_states[:, 0])
    assert pt.kuiper_uniform(ang)[1] > 1e-3
    assert pt.kuiper_uniform(np.full(1000, 0.3))[1] < 1e-6


def test_limit_sde_preserves_equilibrium():
    ens = pt.init_ensemble(P2, 200_000, seed=11)
    out = pt.simulate(ens, 100, 0.01, grad_u=np.zeros((2, 2)))
    edges = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0])
    h = pt.radial_histogram(out.radii(), edges)
    l1 = pt.histogram_l1(h, lambda v: radial_cdf(v, 2.0, 2))
    assert l1 < 0.02
    assert out.step_count == 100


def test_ou_variance_without_stretching():
    # far from the origin's nonlinearity the linear part relaxes the mean like e^{-t/beta}
    p = P2.replace(tau=1.0)
    ens = pt.Ensemble(np.tile([0.01, 0.0], (50_000, 1)), None, 3, 0, p)
    out = pt.simulate(ens, 50, 0.002, grad_u=np.zeros((2, 2)))
    var = out.r_states.var(axis=0)
    expected = 2 * p.relax_rate * 0.1
    assert var == pytest.approx([expected, expected], rel=0.05)


def test_step_guard():
    ens = pt.init_ensemble(P2.replace(tau=0.1), 10, seed=1)
    with pytest.raises(pt.StepGuardError):
        pt.limit_sde_step(ens, None, 0.05)


def test_fene_stays_inside_ball():
    alpha, b = 1.0 / C2, 10.0 * C2
    p = ModelParams(d=2, alpha=alpha)
    ens = pt.init_ensemble(p, 20_000, seed=5, start="gaussian", b_fene=b)
    out = pt.simulate(ens, 50, 0.01, kind="fene", grad_u=np.array([[0.0, 2.0], [0.0, 0.0]]))
    assert np.max(np.sum(out.r_states ** 2, axis=1)) < b
    with pytest.raises(ValueError):
        pt.fene_step(pt.init_ensemble(p, 4, seed=1), 0.01)
    with pytest.raises(ValueError):
        pt.Ensemble(np.array([[10.0, 0.0]]), None, 1, 0, p, b_fene=b)


def test_worker_count_does_not_change_results():
    ens = pt.init_ensemble(P2, 3 * pt.BLOCK + 17, seed=99)
    a = pt.simulate(ens, 3, 0.01, workers=1)
    b = pt.simulate(ens, 3, 0.01, workers=3)
    assert np.array_equal(a.r_states, b.r_states)


def test_hookean_step_deterministic_limit():
    # negligible small-scale intensity and no thermal noise: R' = grad u R - R/beta
    p = P2.replace(tau=1.0)
    modes = build_modes(2, 4, 1e-12)
    x = np.zeros((4, 2))
    x[:, 1] = [0.0, 0.5, 1.0, 1.5]
    r0 = np.ones((4, 2))
    ens = pt.Ensemble(r0, x, 1, 0, p)
    dt, n = 0.01, 100
    for _ in range(n):
        ens = pt.hookean_step(ens, modes, ShearFlow(), dt, thermal=False)
    t = dt * n
    decay = math.exp(-t / p.beta)
    g = np.cos(x[:, 1])
    expect_r1 = decay * (1 + t * g)
    assert np.allclose(ens.r_states[:, 0], expect_r1, rtol=1e-4)
    assert np.allclose(ens.r_states[:, 1], decay, rtol=1e-4)
    assert np.all((ens.x_states >= 0) & (ens.x_states < 2 * math.pi))
    with pytest.raises(ValueError):
        pt.hookean_step(pt.Ensemble(r0, None, 1, 0, p), modes, None, dt)


def test_tail_exponent_on_exact_samples():
    rng = np.random.default_rng(2)
    v = pt.sample_radii(rng, 1_000_000, 2.0, 2)
    fit = pt.tail_exponent(v, (10.0, 100.0))
    assert fit.exponent == pytest.approx(1 - 2 * 2.0, abs=0.15)
    assert fit.power_law
    with pytest.raises(pt.InsufficientSamples):
        pt.tail_exponent(v[:1000], (10.0, 100.0))
    with pytest.raises(ValueError):
        pt.tail_exponent(v, (5.0, 1.0))


def test_histogram_csv(tmp_path):
    h = pt.radial_histogram(np.array([0.1, 0.2, 0.7, 3.0]), np.array([0.0, 0.5, 1.0]))
    h.write_csv(tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["bin_lo", "bin_hi", "count", "density"]
    assert [int(r[2]) for r in rows[1:]] == [2, 1]
    assert float(rows[1][3]) == pytest.approx(2 / (4 * 0.5))
    assert pt.histogram_l1(h, lambda e: np.clip(np.asarray(e), 0, 1)) == pytest.approx(0.5)


def test_ensemble_dump_roundtrip(tmp_path):
    ens = pt.init_ensemble(ModelParams(d=3, alpha=2.5), 1000, seed=2 ** 63 + 5, torus=True)
    pt.write_ensemble(tmp_path / "e.bin", ens, {"tag": 1})
    back, hdr = pt.read_ensemble(tmp_path / "e.bin")
    assert np.array_equal(back.r_states, ens.r_states)
    assert np.array_equal(back.x_states, ens.x_states)
    assert back.rng_seed == ens.rng_seed and back.params == ens.params
    assert hdr["extra"] == {"tag": 1}
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX")
    with pytest.raises(ValueError):
        pt.read_ensemble(tmp_path / "bad.bin")
