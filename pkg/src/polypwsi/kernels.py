"""Backend selection for the hot loops.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback. Setting ``POLYPWSI_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("POLYPWSI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        _impl = _compiled

im2col = _impl.im2col
col2im = _impl.col2im
resize_bilinear = _impl.resize_bilinear
binom_upper_tail = _impl.binom_upper_tail


def backends():
    """Map of available backend name -> module (used by tests and benchmarks)."""
    found = {"python": _fallback}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        found["compiled"] = compiled
    return found
