"""Kernel backend selection.

Hot inner loops (pairwise Hermite feature products, the projected-gradient
weight fitter) exist twice: a numba ``@njit`` implementation and a pure-numpy
fallback with identical semantics.  Selection order:

* ``LISTMEAN_BACKEND=numpy`` forces the fallback,
* ``LISTMEAN_BACKEND=numba`` requires numba (raises if unavailable),
* unset: numba when importable, numpy otherwise.

``benchmarks/compare_backends.py`` times one against the other.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

_FORCED = os.environ.get("LISTMEAN_BACKEND", "").strip().lower()

try:
    from . import _kernels_numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _kernels_numba = None
    _HAVE_NUMBA = False


def backend_name() -> str:
    if _FORCED == "numpy":
        return "numpy"
    if _FORCED == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("LISTMEAN_BACKEND=numba but numba is not importable")
        return "numba"
    if _FORCED not in ("", "auto"):
        raise ValueError(f"unknown LISTMEAN_BACKEND value {_FORCED!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (default: selected backend)."""
    name = backend_name() if name is None else name
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _kernels_numba
    raise ValueError(f"unknown backend {name!r}")
