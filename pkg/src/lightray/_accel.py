"""Selection between numba-compiled kernels and the pure-numpy path.

Set ``LIGHTRAY_DISABLE_NUMBA=1`` in the environment before importing
:mod:`lightray` to force the numpy fallback everywhere.  Both paths produce
bit-identical operators; matrix-vector products agree to rounding.
"""
from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

_FLAG = "LIGHTRAY_DISABLE_NUMBA"


def _env_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _env_disabled():
        raise ImportError("disabled by " + _FLAG)
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe; old system TBB builds only produce a warning
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAVE_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False
    log.debug("numba path unavailable: %s", exc)


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


prange = numba.prange if HAVE_NUMBA else range


def set_threads(k: int | None) -> None:
    """Cap the numba thread pool; no-op on the numpy path."""
    if not HAVE_NUMBA or k is None:
        return
    k = max(1, min(int(k), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(k)


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
