"""Numeric kernel backend selection.

The compiled extension (`_fast`) is preferred when it imported cleanly;
otherwise the numpy reference implementation is used. Setting the
environment variable ``MODNMT_PURE=1`` before import forces the pure
backend regardless of what is installed, which is handy for debugging
and for benchmarking one backend against the other.
"""

import os

from . import pure

try:
    from . import _fast
except ImportError:
    _fast = None

if os.environ.get("MODNMT_PURE") == "1" or _fast is None:
    _impl = pure
else:
    _impl = _fast

BACKEND = _impl.NAME

softmax2d = _impl.softmax2d
softmax2d_grad = _impl.softmax2d_grad
layernorm2d = _impl.layernorm2d
layernorm2d_grad = _impl.layernorm2d_grad
cross_entropy2d = _impl.cross_entropy2d
cross_entropy2d_grad = _impl.cross_entropy2d_grad
adam_update = _impl.adam_update


def available_backends():
    """Name -> module for every backend importable in this process."""
    out = {"pure": pure}
    if _fast is not None:
        out["fast"] = _fast
    return out
