"""Backend selection for the hot per-cell kernels.

The compiled ``_core`` extension is used when it imports; set
``EEGRAV_PURE_PYTHON=1`` to force the NumPy fallback.
"""
import os

from . import _core_py

if os.environ.get("EEGRAV_PURE_PYTHON"):
    _impl = _core_py
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _core_py

BACKEND = "compiled" if _impl is not _core_py else "python"
POISSON_PSI = _core_py.POISSON_PSI

nb_terms = _impl.nb_terms
lag_sums = _impl.lag_sums
