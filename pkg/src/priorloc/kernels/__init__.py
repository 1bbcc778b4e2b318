"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``priorloc.kernels._core``) is preferred when it
imported successfully; otherwise the numpy reference implementation is
used. Set ``PRIORLOC_KERNELS=python`` (or ``native``) to force a backend,
e.g. for the backend-comparison benchmark.
"""

from __future__ import annotations

import os

from . import _reference


def _load_native():
    try:
        from . import _core

        return _core
    except ImportError:
        return None


def available_backends() -> dict:
    """Mapping of backend name to implementation module."""
    backends = {"python": _reference}
    native = _load_native()
    if native is not None:
        backends["native"] = native
    return backends


def get_backend(name: str):
    backends = available_backends()
    if name not in backends:
        raise KeyError(f"kernel backend {name!r} not available (have {sorted(backends)})")
    return backends[name]


def _select_default():
    forced = os.environ.get("PRIORLOC_KERNELS", "").strip().lower()
    backends = available_backends()
    if forced:
        if forced not in backends:
            raise ImportError(
                f"PRIORLOC_KERNELS={forced!r} requested but that backend is unavailable"
            )
        return backends[forced]
    return backends.get("native", _reference)


_impl = _select_default()

p3p_solve = _impl.p3p_solve
score_pose = _impl.score_pose
bilinear_sample = _impl.bilinear_sample


def backend_name() -> str:
    """Name of the backend serving the module-level kernel functions."""
    return _impl.NAME


class use_backend:
    """Context manager that temporarily redirects the module-level kernels.

    Used by the backend-comparison benchmark and by tests; everything
    importing ``priorloc.kernels`` and calling through the module sees
    the swapped implementation.
    """

    def __init__(self, name: str):
        self.module = get_backend(name)

    def __enter__(self):
        global _impl, p3p_solve, score_pose, bilinear_sample
        self._saved = _impl
        _impl = self.module
        p3p_solve = _impl.p3p_solve
        score_pose = _impl.score_pose
        bilinear_sample = _impl.bilinear_sample
        return _impl

    def __exit__(self, *exc):
        global _impl, p3p_solve, score_pose, bilinear_sample
        _impl = self._saved
        p3p_solve = _impl.p3p_solve
        score_pose = _impl.score_pose
        bilinear_sample = _impl.bilinear_sample
        return False
