"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``GRIDCASCADE_KERNEL=python``, the numpy fallback runs instead.
"""

from __future__ import annotations

import os

from . import _kernel_py

RUNNING, RELAY_EVENT, DIVERGED = _kernel_py.RUNNING, _kernel_py.RELAY_EVENT, _kernel_py.DIVERGED

try:
    from ._kernel import advance as _compiled_advance
except ImportError:  # extension not built
    _compiled_advance = None

BACKENDS = {"python": _kernel_py.advance}
if _compiled_advance is not None:
    BACKENDS["cython"] = _compiled_advance


def _default_backend() -> str:
    forced = os.environ.get("GRIDCASCADE_KERNEL", "").strip().lower()
    if forced:
        if forced not in BACKENDS:
            raise RuntimeError(f"GRIDCASCADE_KERNEL={forced!r} is not available; have {sorted(BACKENDS)}")
        return forced
    return "cython" if "cython" in BACKENDS else "python"


BACKEND = _default_backend()


def get_advance(backend: str | None = None):
    name = backend or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
