"""Select the kernel implementation at import time.

The compiled extension is used when it imports; setting ``LTSF_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

from . import _kernels_py

kernels = _kernels_py
NAME = "python"

if not os.environ.get("LTSF_PURE_PYTHON"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        NAME = "cython"
    except ImportError:
        pass


def available_backends():
    """Return ``{name: module}`` for every kernel implementation that imports."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
