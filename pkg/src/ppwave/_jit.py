"""JIT switch for the numeric kernels.

Kernels are written once in numba-compatible Python.  When numba is
available and ``PPWAVE_DISABLE_JIT`` is unset (or ``0``), they are compiled
with ``numba.njit``; otherwise the same source runs as plain Python/numpy.
"""

import os
import warnings

_flag = os.environ.get("PPWAVE_DISABLE_JIT", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

JIT_ENABLED = _numba is not None

if not JIT_ENABLED and not _disabled:
    warnings.warn("numba not found; numeric kernels run in pure-Python mode")


def njit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if _numba is None:
        return func
    return _numba.njit(cache=True)(func)


def python_impl(func):
    """Return the uncompiled Python function behind a kernel."""
    return getattr(func, "py_func", func)
