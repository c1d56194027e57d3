"""Backend selection for the hot kernels.

Set ``SPHERECRITS_BACKEND=numpy`` (or ``SPHERECRITS_NO_NUMBA=1``) before
import to force the pure-numpy paths. ``use_backend`` switches at runtime,
which the tests and the benchmark use to compare both paths.
"""

import contextlib
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None


def _initial_backend():
    if os.environ.get("SPHERECRITS_NO_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        return "numpy"
    name = os.environ.get("SPHERECRITS_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown SPHERECRITS_BACKEND {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


_backend = _initial_backend()


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    old = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


def njit(*args, **kwargs):
    """``numba.njit`` with caching and nogil, or a no-op without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
