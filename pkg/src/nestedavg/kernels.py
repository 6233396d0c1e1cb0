"""Backend selection for the per-iteration kernels.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
pure-numpy ``_pykernels`` module is used. Set ``NESTEDAVG_BACKEND=python``
to force the fallback. Both backends accumulate in the same order and give
identical results.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "seq_sum",
    "norm",
    "matvec",
    "rmatvec",
    "chain_product",
    "batch_mean",
    "moving_average",
    "nested_average",
    "linearized_average",
    "project_box",
    "project_ball",
)

BACKEND = None


def available_backends():
    return ["cython", "python"] if _ckernels is not None else ["python"]


def use_backend(name):
    """Rebind the module-level kernels to ``name`` ("cython" or "python")."""
    global BACKEND
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        impl = _ckernels
    elif name == "python":
        impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(impl, fn)
    BACKEND = name


_requested = os.environ.get("NESTEDAVG_BACKEND", "").strip().lower()
if _requested == "python" or _ckernels is None:
    use_backend("python")
else:
    use_backend("cython")
