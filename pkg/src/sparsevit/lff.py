"""Learnable feature fusion head.

Stage-3 taps are linearly projected to the fused width, stage-4 taps are
bilinearly upsampled to the stage-3 grid. Each map is scaled by its own
per-channel ``gamma`` (initialised to 1e-6), the maps are summed, projected
to one channel and upsampled to the input resolution.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .backbone import FeaturePyramid
from .tensor import Tensor

GAMMA_INIT = 1e-6


def init_params(n_stage3: int, n_stage4: int, c3: int, c4: int, fuse_dim: int,
                rng: np.random.Generator) -> dict:
    if c4 != fuse_dim:
        raise ValueError(f"stage-4 channels ({c4}) must equal the fused width ({fuse_dim}); "
                         "stage-4 maps are not projected")
    # fan-in scaled, not the 0.02 used inside the backbone: the head output is
    # already damped by gamma, a second small factor leaves the backbone starved
    p = {}
    for i in range(n_stage3):
        p[f"lff.proj{i}.w"] = Tensor(rng.normal(0.0, c3 ** -0.5, (c3, fuse_dim)), requires_grad=True)
        p[f"lff.proj{i}.b"] = Tensor(np.zeros(fuse_dim), requires_grad=True)
    for i in range(n_stage3 + n_stage4):
        p[f"lff.gamma{i}"] = Tensor(np.full(fuse_dim, GAMMA_INIT), requires_grad=True)
    p["lff.head.w"] = Tensor(rng.normal(0.0, fuse_dim ** -0.5, (fuse_dim, 1)), requires_grad=True)
    p["lff.head.b"] = Tensor(np.zeros(1), requires_grad=True)
    return p


def unify_channels(pyramid: FeaturePyramid, p: dict) -> list:
    """All maps as ``[B, H/16, W/16, fuse_dim]``."""
    out = []
    for i, f in enumerate(pyramid.stage3):
        w = p[f"lff.proj{i}.w"]
        if f.shape[-1] != w.shape[0]:
            raise ValueError(f"stage-3 map {i} has {f.shape[-1]} channels, projection expects {w.shape[0]}")
        out.append(ops.linear(f, w, p[f"lff.proj{i}.b"]))
    if not pyramid.stage3:
        raise ValueError("LFF needs at least one stage-3 map to fix the fused grid")
    h, w = pyramid.stage3[0].shape[1:3]
    fuse_dim = out[0].shape[-1]
    for f in pyramid.stage4:
        if f.shape[-1] != fuse_dim:
            raise ValueError(f"stage-4 map has {f.shape[-1]} channels, fused width is {fuse_dim}")
        up = ops.bilinear_upsample(f.permute(0, 3, 1, 2), h, w)
        out.append(up.permute(0, 2, 3, 1))
    return out


def fuse(maps: list, p: dict, out_h: int, out_w: int) -> Tensor:
    """Scale, sum, project to one channel, upsample; returns logits ``[B, out_h, out_w]``."""
    shape = maps[0].shape
    acc = None
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise ValueError(f"fused maps must share a shape, got {m.shape} vs {shape}")
        term = m * p[f"lff.gamma{i}"]
        acc = term if acc is None else acc + term
    low = ops.linear(acc, p["lff.head.w"], p["lff.head.b"])      # [B, h, w, 1]
    up = ops.bilinear_upsample(low.permute(0, 3, 1, 2), out_h, out_w)
    return up.reshape(shape[0], out_h, out_w)


def forward(pyramid: FeaturePyramid, p: dict) -> Tensor:
    return fuse(unify_channels(pyramid, p), p, pyramid.height, pyramid.width)


def predict_mask(logits, threshold: float = 0.5) -> np.ndarray:
    """Binary mask where ``sigmoid(logit) > threshold`` (strict)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    # sigmoid(z) > t  <=>  z > logit(t); avoids rounding at the boundary
    return (z > np.log(threshold / (1.0 - threshold))).astype(np.uint8)
