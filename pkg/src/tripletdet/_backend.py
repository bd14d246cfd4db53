"""Pick the compiled kernels when available, the numpy ones otherwise.

Set ``TRIPLETDET_BACKEND=python`` to force the fallback before import, or
wrap calls in :func:`use_backend` to switch temporarily (tests, benchmarks).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels


def _select() -> str:
    wanted = os.environ.get("TRIPLETDET_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(f"TRIPLETDET_BACKEND={wanted!r} unavailable; have {sorted(BACKENDS)}")
        return wanted
    return "compiled" if "compiled" in BACKENDS else "python"


_active = _select()


def active_backend() -> str:
    return _active


def kernels():
    return BACKENDS[_active]


@contextmanager
def use_backend(name: str):
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(BACKENDS)}")
    prev, _active = _active, name
    try:
        yield BACKENDS[name]
    finally:
        _active = prev
