"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback in ``_kernels_py``. Set ``PHENO_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _kernels_py

if os.environ.get("PHENO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

rq_lml_grid = _impl.rq_lml_grid
tsne_gradient = _impl.tsne_gradient
