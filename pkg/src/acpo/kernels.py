"""Backend selection for the sequential hot loops.

The compiled extension is used when it was built; otherwise, or when the
``ACPO_PURE_PYTHON`` environment variable is set to a non-empty value, the
pure-Python implementation is used. Both produce bit-identical output.
"""

import os

from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("ACPO_PURE_PYTHON"):
    _active = compiled_backend
    BACKEND = "cython"
else:
    _active = python_backend
    BACKEND = "python"

tabular_rollout = _active.tabular_rollout
backward_accumulate = _active.backward_accumulate

__all__ = ["BACKEND", "backward_accumulate", "compiled_backend", "python_backend",
           "tabular_rollout"]
