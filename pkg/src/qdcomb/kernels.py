"""Backend selection for the hot receiver loops.

The compiled extension is used when it imports; setting the environment
variable ``QDCOMB_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("QDCOMB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def available_backends():
    names = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        names["cython"] = compiled
    return names


def cma_run(*args, **kwargs):
    return _impl.cma_run(*args, **kwargs)


def bps_unwrapped(*args, **kwargs):
    return _impl.bps_unwrapped(*args, **kwargs)
