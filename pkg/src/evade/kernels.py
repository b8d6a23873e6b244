"""Backend selection for the convolution kernels.

The compiled extension is preferred. Setting ``EVADE_PURE_PYTHON=1`` in the
environment forces the numpy fallback, as does a missing build.
"""
import os

from . import _conv_py

if os.environ.get("EVADE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _conv_py
    BACKEND = "python"
else:
    try:
        from . import _conv_ext as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _conv_py
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
