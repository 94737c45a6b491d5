"""Backend selection for the hot kernels.

Every kernel in :mod:`evla.kernels` exists twice: a numba ``@njit`` loop and a
vectorised numpy fallback.  Which one the public API calls is decided by the
``EVLA_BACKEND`` environment variable (``numba`` or ``numpy``) at import time,
and can be switched later with :func:`set_backend`.  When numba is not
importable the numpy path is used regardless of the flag.

``EVLA_THREADS`` caps numba's thread pool.
"""

from __future__ import annotations

import contextlib
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy")


def _backend_from_env() -> str:
    requested = os.environ.get("EVLA_BACKEND", "numba").strip().lower()
    if requested not in BACKENDS:
        raise ValueError(f"EVLA_BACKEND must be one of {BACKENDS}, got {requested!r}")
    if requested == "numba" and not HAS_NUMBA:
        return "numpy"
    return requested


_active = _backend_from_env()


def _apply_thread_cap() -> None:
    cap = os.environ.get("EVLA_THREADS")
    if not cap or not HAS_NUMBA:
        return
    n = max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


_apply_thread_cap()


def njit(func):
    """Compile ``func`` with numba when available; otherwise return it as is."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
