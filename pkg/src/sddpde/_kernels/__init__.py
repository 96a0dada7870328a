"""Time-stepping kernels: compiled Cython core with a pure-Python fallback.

The compiled module is used when it imports; set ``SDDPDE_BACKEND=python``
to force the fallback.  ``get_backend(name)`` returns a specific one.
"""
from __future__ import annotations

import os

from . import _pycore

try:
    from . import _core as _ccore
except ImportError:  # extension not built
    _ccore = None

B_NICHOLSON, B_SATLIN, B_CONSTANT = _pycore.B_NICHOLSON, _pycore.B_SATLIN, _pycore.B_CONSTANT
ETA_CONSTANT, ETA_HISTORY = _pycore.ETA_CONSTANT, _pycore.ETA_HISTORY
OK, FP_FAIL, WINDOW_FAIL = _pycore.OK, _pycore.FP_FAIL, _pycore.WINDOW_FAIL


def available() -> list[str]:
    return ["python"] + (["cython"] if _ccore is not None else [])


def get_backend(name: str | None = None):
    name = name or os.environ.get("SDDPDE_BACKEND", "auto")
    if name == "python":
        return _pycore
    if name in ("cython", "compiled"):
        if _ccore is None:
            raise ImportError("compiled backend requested but sddpde._kernels._core is not built")
        return _ccore
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    return _ccore if _ccore is not None else _pycore


backend = get_backend()
