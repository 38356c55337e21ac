"""Kernel backend selection.

The compiled extension is used when it imports; setting ``ADUCA_PURE_PYTHON=1``
forces the numpy/scipy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
csr_rows_spliced = _kernels_py.csr_rows_spliced
prox_coordinatewise = _kernels_py.prox_coordinatewise

if os.environ.get("ADUCA_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "compiled"
        csr_rows_spliced = _compiled.csr_rows_spliced
        prox_coordinatewise = _compiled.prox_coordinatewise


def get_backend(name):
    """Return a namespace of kernels for ``name`` in {"compiled", "python"}."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
