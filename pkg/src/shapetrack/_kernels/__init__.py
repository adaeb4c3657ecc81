"""Backend selection for the hot tracking kernel.

The compiled extension is preferred when it imports; otherwise the numpy
fallback takes over transparently.  ``SHAPETRACK_BACKEND=native|pure`` forces
a choice (and raises if a forced native backend is unavailable).  Both
backends expose the same ``refine_level`` contract and produce matching
results up to float summation order.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import pure

_active: ModuleType


def _load(name: str) -> ModuleType:
    if name == "pure":
        return pure
    if name == "native":
        from . import _native  # type: ignore[attr-defined]

        return _native
    raise ValueError(f"unknown backend {name!r}; expected 'native' or 'pure'")


def select(name: str | None = None) -> ModuleType:
    """Switch the active backend; mostly for tests and benchmarks."""
    global _active
    if name is None:
        try:
            _active = _load("native")
        except ImportError:
            _active = pure
    else:
        _active = _load(name)
    return _active


def active() -> ModuleType:
    return _active


def backend_name() -> str:
    return _active.BACKEND_NAME


_env = os.environ.get("SHAPETRACK_BACKEND", "").strip().lower()
select(_env if _env else None)
