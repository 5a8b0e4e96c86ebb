"""Differentiable operations on :class:`~sparsevit.tensor.Tensor`.

Every function takes tensors (or array-likes, promoted as constants) and
returns a new tensor. None of them mutate their inputs.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import Tensor, _record_flops, as_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._make(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return Tensor._make(a.data * c, (a,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf))

    return Tensor._make(x.data * cdf, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return Tensor._make(y, (x,), backward)


# -- reductions and shape ------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return Tensor._make(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor._make(out, (x,), backward)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        x._accumulate(np.ascontiguousarray(g.transpose(inv)))

    return Tensor._make(x.data.transpose(axes), (x,), backward)


def slice(x: Tensor, idx) -> Tensor:  # noqa: A001
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x._accumulate(full)

    return Tensor._make(out, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [np.s_[:]] * g.ndim
                sl[axis] = np.s_[lo:hi]
                t._accumulate(np.ascontiguousarray(g[tuple(sl)]))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tuple(tensors), backward)


# -- linear algebra -------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ValueError(f"matmul batch dimensions not broadcastable: {a.shape} @ {b.shape}") from exc
    m, k = a.shape[-2:]
    n = b.shape[-1]
    _record_flops(2 * int(np.prod(batch, dtype=np.int64)) * m * k * n)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            b._accumulate(gb)

    return Tensor._make(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# -- normalisation and attention pieces ---------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} invalid for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return Tensor._make(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"layer_norm gain/bias must have shape ({c},), got {gain.shape}, {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, c).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(dx)

    return Tensor._make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy between ``sigmoid(logits)`` and a 0/1 target."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ValueError(f"target shape {t.shape} does not match logits {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        logits._accumulate(g * (_sigmoid(z) - t) / n)

    return Tensor._make(loss.mean(), (logits,), backward)


# -- spatial ops ------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x [B,C,H,W]`` with ``kernel [O,C,k,k]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape}, {kernel.shape}")
    b, c, h, w = x.shape
    o, kc, k, k2 = kernel.shape
    if kc != c or k != k2:
        raise ValueError(f"conv2d kernel {kernel.shape} incompatible with input {x.shape}")
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output extent non-positive ({ho}x{wo}) for input {h}x{w}, "
                         f"k={k}, stride={stride}, pad={pad}")
    cols = kernels.im2col(x.data, k, stride, pad)          # [B, C*k*k, Ho*Wo]
    wmat = kernel.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols)                            # [B, O, Ho*Wo]
    _record_flops(2 * b * o * c * k * k * ho * wo)
    if bias is not None:
        out += bias.data.reshape(1, o, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g2 = g.reshape(b, o, ho * wo)
        if kernel.requires_grad:
            gw = np.einsum("bop,bqp->oq", g2, cols, optimize=True)
            kernel._accumulate(gw.reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            x._accumulate(kernels.col2im(gcols, x.shape, k, stride, pad))

    return Tensor._make(out.reshape(b, o, ho, wo), parents, backward)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` holds the weights producing output sample ``i`` (align_corners=False)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes, half-pixel (align_corners=False) convention."""
    h, w = x.shape[-2:]
    if out_h < h or out_w < w:
        raise ValueError(f"bilinear_upsample only upsamples: {h}x{w} -> {out_h}x{out_w}")
    ah = _interp_matrix(h, out_h)
    aw = _interp_matrix(w, out_w)
    out = ah @ x.data @ aw.T

    def backward(g):
        x._accumulate(ah.T @ g @ aw)

    return Tensor._make(out, (x,), backward)
