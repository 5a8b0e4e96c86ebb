"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(f, x: Tensor, step: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x.data``.

    ``f`` takes no arguments and must read ``x`` afresh on each call. When
    ``coords`` (flat indices) is given only those entries are perturbed and
    the result is a vector aligned with ``coords``.
    """
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    with no_grad():
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            out[n] = (fp - fm) / (2.0 * step)
    return out if coords is not None else out.reshape(x.shape)


def finite_diff_check(f, x: Tensor, step: float = 1e-5, coords=None) -> float:
    """Max over coordinates of ``|analytic - numeric| / (|numeric| + 1e-8)``.

    ``f(x)`` must return a scalar tensor built from ``x``.
    """
    x.grad = None
    x.requires_grad = True
    loss = f(x)
    loss.backward()
    analytic = x.grad.reshape(-1)
    numeric = numerical_grad(lambda: f(x), x, step, coords)
    if coords is not None:
        analytic = analytic[np.asarray(coords)]
    numeric = numeric.reshape(-1)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
