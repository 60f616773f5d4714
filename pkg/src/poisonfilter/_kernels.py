"""Backend selection for the hot loops.

The compiled ``_core`` extension is used when importable; setting
``POISONFILTER_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _fallback

try:
    if os.environ.get("POISONFILTER_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _core as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

prox_grad_steps = _impl.prox_grad_steps
mfista_steps = _impl.mfista_steps
cd_sweeps = _impl.cd_sweeps
pairwise_distances = _impl.pairwise_distances

__all__ = ["BACKEND", "prox_grad_steps", "mfista_steps", "cd_sweeps", "pairwise_distances"]
