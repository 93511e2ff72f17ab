"""Kernel backend selection.

Hot kernels ship in two variants: a numba ``@njit`` implementation and a pure
numpy one. The env var ``FREQCAST_BACKEND`` picks the active variant:

    FREQCAST_BACKEND=numpy   force the pure-numpy path
    FREQCAST_BACKEND=numba   require numba (import error if unavailable)
    unset                    numba when importable, else numpy

Both variants share precomputed twiddle/permutation tables, so results agree
to the last bit on the supported sizes.
"""
from __future__ import annotations

import os

_ENV_VAR = "FREQCAST_BACKEND"

try:
    import numba  # noqa: F401

    _NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_AVAILABLE = False

_FORCED: str | None = None


def backend_name() -> str:
    """Active backend: ``"numba"`` or ``"numpy"``."""
    choice = _FORCED or os.environ.get(_ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _NUMBA_AVAILABLE:
            raise RuntimeError("FREQCAST_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if _NUMBA_AVAILABLE else "numpy"


def use_numba() -> bool:
    return backend_name() == "numba"


def force_backend(name: str | None) -> None:
    """Override the env selection in-process (used by tests and benchmarks)."""
    global _FORCED
    if name not in (None, "numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    _FORCED = name
