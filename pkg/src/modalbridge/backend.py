"""Kernel backend selection.

The compiled extension is preferred when importable; the NumPy fallback is
functionally identical. Set MODALBRIDGE_BACKEND=numpy (or =cython) to force
a backend, e.g. for the benchmark in benchmarks/bench_backends.py.
"""

import os

from . import _kernels_np

_forced = os.environ.get("MODALBRIDGE_BACKEND", "").strip().lower()

if _forced == "numpy":
    kernels = _kernels_np
    BACKEND = "numpy"
elif _forced == "cython":
    from . import _kernels_cy as kernels  # raises if the extension is not built

    BACKEND = "cython"
else:
    try:
        from . import _kernels_cy as kernels

        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_np
        BACKEND = "numpy"


def get_kernels(name=None):
    """Return a kernel module by name ('numpy' or 'cython'); default: active."""
    if name is None:
        return kernels
    if name == "numpy":
        return _kernels_np
    if name == "cython":
        from . import _kernels_cy

        return _kernels_cy
    raise ValueError(f"unknown backend {name!r}")
