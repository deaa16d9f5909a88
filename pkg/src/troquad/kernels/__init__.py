"""Kernel backends for the fused sample-and-evaluate loop.

Two interchangeable implementations of the same contract
(accumulate/collect over a counter range of one stream):

  - ``_core``: compiled (Cython) per-sample loop, built at install time
    when a C toolchain is present;
  - ``fallback``: pure numpy, always available.

Selection: TROQUAD_BACKEND=compiled|fallback wins, else the compiled
core when importable, else the fallback.  Forcing `compiled` on an
install without the extension is an error rather than a silent
downgrade.
"""

from __future__ import annotations

import os

from . import fallback
from .plan import LOG_X_REJECT, GraphPlan, make_plan  # noqa: F401

try:
    from . import _core
except ImportError:  # extension not built; the fallback covers everything
    _core = None


def available_backends() -> tuple[str, ...]:
    return ("compiled", "fallback") if _core is not None else ("fallback",)


def get_backend(name: str | None = None):
    """Resolve a backend module by name, env var, or availability."""
    if name is None:
        name = os.environ.get("TROQUAD_BACKEND") or (
            "compiled" if _core is not None else "fallback")
    if name == "compiled":
        if _core is None:
            raise RuntimeError(
                "TROQUAD_BACKEND=compiled but the extension is not built; "
                "reinstall with a C toolchain or use the fallback")
        return _core
    if name == "fallback":
        return fallback
    raise ValueError(f"unknown backend {name!r} (use compiled or fallback)")


def default_backend_name() -> str:
    return get_backend().NAME
