"""Backend selection for the Cox accumulation kernel.

The compiled extension is used when it imports; set ``PATENTSURV_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

from . import _pykernel

python_accumulate = _pykernel.accumulate

try:
    from ._ckernel import accumulate as compiled_accumulate
except ImportError:  # extension not built
    compiled_accumulate = None

if compiled_accumulate is not None and os.environ.get("PATENTSURV_PURE_PYTHON", "") in ("", "0"):
    accumulate = compiled_accumulate
    BACKEND = "cython"
else:
    accumulate = python_accumulate
    BACKEND = "python"
