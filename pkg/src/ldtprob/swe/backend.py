"""Kernel backend selection.

The compiled extension is preferred.  Set ``LDTPROB_BACKEND=numpy`` to force
the pure numpy implementation (useful for debugging and for the benchmark).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None


def get_kernels(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ('cython', 'numpy' or None)."""
    if name is None:
        name = os.environ.get("LDTPROB_BACKEND", "cython" if _kernels_c else "numpy")
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        if _kernels_c is None:
            raise ImportError("compiled kernel not available; rebuild or use 'numpy'")
        return _kernels_c
    raise ValueError(f"unknown backend {name!r}")


kernels = get_kernels()
BACKEND = "numpy" if kernels is _kernels_py else "cython"
HAVE_COMPILED = _kernels_c is not None
