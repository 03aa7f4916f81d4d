"""Backend selection for the hot kernels.

The numba kernels are used by default. Setting ``SKLAB_NUMBA=0`` in the
environment switches every kernel to its vectorised numpy twin, which is
slower but has no compilation step.
"""
import os

_FALSY = {"0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("SKLAB_NUMBA", "1").strip().lower() not in _FALSY


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def kernels(backend=None):
    """Return the kernel module for ``backend`` ("numba" or "numpy")."""
    backend = backend or backend_name()
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        from .kernels import nb

        return nb
    if backend == "numpy":
        from .kernels import np_ as mod

        return mod
    raise ValueError(f"unknown backend {backend!r}")
