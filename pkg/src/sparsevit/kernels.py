"""Hot convolution kernels, compiled when available.

``BACKEND`` is ``"cython"`` if the extension imported, otherwise ``"numpy"``.
Set ``SPARSEVIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if not os.environ.get("SPARSEVIT_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """``[B,C,H,W]`` -> ``[B, C*k*k, Ho*Wo]`` patch matrix."""
    if _compiled is not None:
        return _compiled.im2col(np.ascontiguousarray(x), k, stride, pad)
    return _kernels_py.im2col(x, k, stride, pad)


def col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch columns back onto the image."""
    if _compiled is not None:
        return _compiled.col2im(np.ascontiguousarray(cols), tuple(shape), k, stride, pad)
    return _kernels_py.col2im(cols, shape, k, stride, pad)
