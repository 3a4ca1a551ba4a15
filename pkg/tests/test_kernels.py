import numpy as np
import pytest

from polyturb import _kernels
from polyturb.turbulence import build_modes

pytestmark = pytest.mark.skipif(not _kernels.compiled_available(),
                                reason="compiled kernels not built")


def _both(name, *args):
    py = getattr(_kernels.backend_module("python"), name)(*args)
    cc = getattr(_kernels.backend_module("compiled"), name)(*args)
    return py, cc


def test_backend_selection():
    assert _kernels.BACKEND in ("python", "compiled")
    with pytest.raises(ValueError):
        _kernels.backend_module("fortran")


def test_corrector_partial_agrees():
    m = build_modes(2, 16, 1.0)
    args = (np.ascontiguousarray(m.k, dtype=float), m.dirs, m.amp, m.phase,
            np.array([0.3, 1.1]), np.array([1.0, -0.5]))
    a, b = _both("corrector_partial", *args)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_sde_kernels_agree():
    rng = np.random.default_rng(3)
    R = rng.standard_normal((5000, 2))
    xi = rng.standard_normal((5000, 2))
    M = np.array([[0.0, 1.0], [0.0, 0.0]])
    a, b = _both("limit_sde_update", R, xi, M, 0.01, 1.0, np.sqrt(2.0), 2.0)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    (fa, ra), (fb, rb) = _both("fene_update", 0.3 * R, xi, M, 0.01, 1.0, np.sqrt(2.0), 2.0,
                               2.72, 20)
    assert ra == rb
    assert np.allclose(fa, fb, rtol=1e-12, atol=1e-12)
    assert np.all(np.sum(fa * fa, axis=1) < 2.72)


@pytest.mark.parametrize("clip", [False, True])
def test_interp_agrees(clip):
    rng = np.random.default_rng(4)
    f = np.ascontiguousarray(rng.random((20, 18, 2)))
    q1 = rng.uniform(-5, 25, 400)
    q2 = rng.uniform(-5, 25, 400)
    a, b = _both("interp_periodic", f, q1, q2, clip)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
