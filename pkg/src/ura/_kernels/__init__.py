"""Hot-kernel backend selection.

The compiled Cython core is used when present; otherwise the numpy
reference implementation takes over. Set URA_KERNELS=numpy or
URA_KERNELS=cython to force a backend (the latter raises if the extension
is missing).
"""

import os

from . import _numpy_ref

_requested = os.environ.get("URA_KERNELS", "").strip().lower()

if _requested == "numpy":
    _impl = _numpy_ref
elif _requested == "cython":
    from . import _core as _impl
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _numpy_ref

im2col = _impl.im2col
col2im = _impl.col2im
warp_forward = _impl.warp_forward
warp_backward = _impl.warp_backward


def backend_name() -> str:
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return _impl.BACKEND
