"""Select the compiled kernels when available, else the pure-Python fallback.

Set ``ADVTRANSFER_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("ADVTRANSFER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "python"

edit_distance = _impl.edit_distance
ctc_forward_backward = _impl.ctc_forward_backward
