"""Backend selection for the shape-function kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded. Set ``SHARES_BACKEND=python`` to force the fallback.
"""
import os

_forced = os.environ.get("SHARES_BACKEND", "").lower()

if _forced == "python":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _forced == "cython":
            raise
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
adam_step = _impl.adam_step


def load(name):
    """Return the kernel module for backend `name` (``"python"`` or ``"cython"``)."""
    if name == "python":
        from . import _kernels_py
        return _kernels_py
    from . import _kernels
    return _kernels
