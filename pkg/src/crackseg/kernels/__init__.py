"""Hot-kernel backend selection.

At import time we pick the compiled extension if it was built, otherwise
the vectorized numpy fallback. The choice can be forced with the
environment variable ``CRACKSEG_KERNELS`` set to ``cython`` or ``numpy``
(``auto`` is the default). Both backends implement identical semantics
and produce bitwise-identical outputs.
"""
import os

import numpy as np

from . import numpy_impl

_SUPPORTED_DTYPES = (np.float32, np.float64)

_choice = os.environ.get("CRACKSEG_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ImportError(f"CRACKSEG_KERNELS must be auto, cython or numpy (got {_choice!r})")

_ext = None
if _choice in ("auto", "cython"):
    try:
        from . import _core as _ext
    except ImportError:
        _ext = None
    if _choice == "cython" and _ext is None:
        raise ImportError("CRACKSEG_KERNELS=cython but the compiled extension is not built")

_impl = _ext if (_ext is not None and _choice != "numpy") else numpy_impl
BACKEND = "cython" if _impl is not numpy_impl else "numpy"


def _prep(x):
    if x.dtype not in _SUPPORTED_DTYPES:
        raise TypeError(f"kernels support float32/float64 tensors, got {x.dtype}")
    return np.ascontiguousarray(x)


def im2col(x, kh, kw, sh, sw, ph, pw):
    return _impl.im2col(_prep(x), kh, kw, sh, sw, ph, pw)


def col2im_add(cols, h, w, kh, kw, sh, sw, ph, pw):
    return _impl.col2im_add(_prep(cols), h, w, kh, kw, sh, sw, ph, pw)


def maxpool2x2_forward(x):
    return _impl.maxpool2x2_forward(_prep(x))


def maxpool2x2_backward(arg, grad_out):
    return _impl.maxpool2x2_backward(np.ascontiguousarray(arg), _prep(grad_out))
