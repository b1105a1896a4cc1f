"""Kernel backend selection.

Two interchangeable convolution backends are provided:

* ``numba`` -- direct-loop kernels compiled with ``@njit`` (default when
  numba is importable).
* ``numpy`` -- pure-numpy im2col lowering, used as fallback and as a
  cross-check for the compiled path.

Selection is controlled by the ``GMBINET_BACKEND`` environment variable
(``numba`` or ``numpy``) or at runtime via :func:`set_backend`.  The
``GMBI_THREADS`` environment variable caps numba's thread count.
"""

import os

_BACKEND = None


def _detect_default():
    name = os.environ.get("GMBINET_BACKEND", "").strip().lower()
    if name in ("numba", "numpy"):
        return name
    if name:
        raise ValueError(f"unknown GMBINET_BACKEND {name!r} (expected 'numba' or 'numpy')")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def set_backend(name):
    """Force the kernel backend; returns the previous backend name."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    prev = _BACKEND[0] if _BACKEND is not None else None
    if name == "numba":
        _configure_threads()
        from . import kernels_numba as mod
    else:
        from . import kernels_numpy as mod
    _BACKEND = (name, mod)
    return prev


def _configure_threads():
    cap = os.environ.get("GMBI_THREADS")
    if cap:
        import numba
        numba.set_num_threads(max(1, int(cap)))


def backend_name():
    if _BACKEND is None:
        set_backend(_detect_default())
    return _BACKEND[0]


def kernels():
    """Return the active kernel module."""
    if _BACKEND is None:
        set_backend(_detect_default())
    return _BACKEND[1]
