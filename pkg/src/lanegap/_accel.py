"""Numba acceleration switch for the hot numeric kernels.

Kernels are compiled with numba when it is importable and the environment
variable ``LANEGAP_NUMBA`` is not set to ``0``/``false``/``off``.  The pure
numpy path is always importable, so the package works without a compiler
and both paths can be benchmarked against each other in one process.
"""

import os

__all__ = ["NUMBA_ENABLED", "HAVE_NUMBA", "jit_kernel", "jit_variant"]


def _flag_enabled() -> bool:
    raw = os.environ.get("LANEGAP_NUMBA", "1").strip().lower()
    return raw not in {"0", "false", "off", "no"}


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - sandbox always has numba
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and _flag_enabled()


def jit_kernel(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it unchanged."""
    if NUMBA_ENABLED:
        from numba import njit

        return njit(cache=True)(fn)
    return fn


def jit_variant(fn):
    """Force-compile ``fn`` regardless of the env flag (benchmark helper)."""
    if not HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not installed")
    from numba import njit

    return njit(cache=True)(fn)
