"""Hot kernels with a compiled core and a numpy fallback.

The backend is chosen at import: the Cython extension when it is built,
otherwise the numpy module.  Set ``POLYTURB_BACKEND=python`` to force the
fallback or ``POLYTURB_BACKEND=compiled`` to require the extension.
"""

import os

from . import _pykernels

_choice = os.environ.get("POLYTURB_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"POLYTURB_BACKEND must be auto, python or compiled, not {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels

corrector_partial = _impl.corrector_partial
limit_sde_update = _impl.limit_sde_update
fene_update = _impl.fene_update
interp_periodic = _impl.interp_periodic


def backend_module(name):
    """Return the kernel module for ``name`` in {"python", "compiled"}."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    return _compiled is not None
