"""Wall-clock comparison of the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]`` after building
the extension (``python setup.py build_ext --inplace`` or an editable
install).  Each kernel is timed on the same inputs under both backends and
the outputs are compared.
"""

import argparse
import timeit

import numpy as np

from polyturb import _kernels
from polyturb.turbulence import build_modes


def _inputs(rng):
    modes = build_modes(2, 64, 1.0)
    n = 100_000
    R = rng.standard_normal((n, 2))
    xi = rng.standard_normal((n, 2))
    M = np.array([[0.0, 1.0], [0.0, 0.0]])
    f = np.ascontiguousarray(rng.standard_normal((128, 128, 2)))
    q1 = rng.uniform(0, 128, 128 * 128)
    q2 = rng.uniform(0, 128, 128 * 128)
    kf = np.ascontiguousarray(modes.k, dtype=float)
    return {
        "corrector_partial": (kf, modes.dirs, modes.amp, modes.phase, np.zeros(2),
                              np.array([1.0, 1.0])),
        "limit_sde_update": (R, xi, M, 0.01, 1.0, np.sqrt(2.0), 2.0),
        "fene_update": (R * 0.3, xi, M, 0.01, 1.0, np.sqrt(2.0), 2.0, 2.72, 20),
        "interp_periodic": (f, q1, q2, False),
    }


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _kernels.compiled_available():
        print("compiled kernels are not built; only the numpy fallback is available")
    backends = ["python"] + (["compiled"] if _kernels.compiled_available() else [])
    inputs = _inputs(np.random.default_rng(0))
    print(f"{'kernel':<20}" + "".join(f"{b + ' [ms]':>16}" for b in backends)
          + f"{'speedup':>10}{'max |diff|':>14}")
    for name, a in inputs.items():
        times, outs = [], []
        for b in backends:
            fn = getattr(_kernels.backend_module(b), name)
            outs.append(np.asarray(_first(fn(*a))))
            times.append(min(timeit.repeat(lambda: fn(*a), number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:<20}" + "".join(f"{t:>16.3f}" for t in times)
        if len(backends) == 2:
            diff = float(np.max(np.abs(outs[0] - outs[1])))
            line += f"{times[0] / times[1]:>10.1f}{diff:>14.2e}"
        print(line)


if __name__ == "__main__":
    main()
