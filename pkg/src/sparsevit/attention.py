"""Strided (dilated) token grouping and group-restricted multi-head attention.

A token grid ``[..., H, W, C]`` is split by a sparsity rate ``s`` into
``s*s`` groups. Token ``(i, j)`` belongs to group ``(i % s, j % s)`` and
sits at intra-group index ``(i // s) * (W // s) + (j // s)``. Attention is
computed independently inside each group, so every group samples the whole
grid at stride ``s`` while neighbouring tokens never attend to each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


def check_rate(s: int) -> int:
    if not isinstance(s, (int, np.integer)) or s < 1 or (s & (s - 1)) != 0:
        raise ValueError(f"sparsity rate must be a power of two >= 1, got {s!r}")
    return int(s)


@dataclass
class GroupedTokens:
    groups: Tensor  # [..., s*s, (H/s)*(W/s), C]
    height: int
    width: int
    channels: int
    rate: int

    @property
    def group_count(self) -> int:
        return self.rate * self.rate

    @property
    def group_size(self) -> int:
        return (self.height // self.rate) * (self.width // self.rate)


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    def __post_init__(self):
        c = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            w = getattr(self, name)
            if w.shape != (c, c):
                raise ValueError(f"attention weight {name} must be ({c}, {c}), got {w.shape}")
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"heads={self.heads} must divide channels={c}")

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @classmethod
    def init(cls, channels: int, heads: int, rng: np.random.Generator, std: float = 0.02):
        ws = [Tensor(rng.normal(0.0, std, (channels, channels)), requires_grad=True)
              for _ in range(4)]
        return cls(*ws, heads=heads)


def partition_strided(x: Tensor, s: int) -> GroupedTokens:
    """``[..., H, W, C]`` -> groups ``[..., s*s, (H/s)*(W/s), C]``; pure data movement."""
    s = check_rate(s)
    *lead, h, w, c = x.shape
    if h % s or w % s:
        raise ValueError(f"sparsity rate s={s} must divide grid extents H={h}, W={w}")
    hs, ws = h // s, w // s
    n = len(lead)
    # (i, j) = (a*s + p, b*s + q): group (p, q), intra index a*ws + b
    t = x.reshape(*lead, hs, s, ws, s, c)
    t = t.permute(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    t = t.reshape(*lead, s * s, hs * ws, c)
    return GroupedTokens(t, h, w, c, s)


def unpartition(g: GroupedTokens) -> Tensor:
    """Exact inverse of :func:`partition_strided`."""
    s, h, w, c = g.rate, g.height, g.width, g.channels
    hs, ws = h // s, w // s
    *lead, _, _, _ = g.groups.shape
    n = len(lead)
    t = g.groups.reshape(*lead, s, s, hs, ws, c)
    t = t.permute(*range(n), n + 2, n, n + 3, n + 1, n + 4)
    return t.reshape(*lead, h, w, c)


def multi_head_attention(tokens: Tensor, p: AttentionParams) -> Tensor:
    """Scaled dot-product self-attention over the second-to-last axis of ``[..., n, C]``."""
    if tokens.shape[-1] != p.channels:
        raise ValueError(f"token channels {tokens.shape[-1]} != attention width {p.channels}")
    *lead, n, c = tokens.shape
    h, d = p.heads, p.head_dim
    k = len(lead)

    def heads(t):
        # [..., n, C] -> [..., heads, n, d]
        return t.reshape(*lead, n, h, d).permute(*range(k), k + 1, k, k + 2)

    q = heads(tokens @ p.wq)
    kk = heads(tokens @ p.wk)
    v = heads(tokens @ p.wv)
    scores = ops.scale(q @ kk.permute(*range(k + 1), k + 2, k + 1), 1.0 / math.sqrt(d))
    attn = ops.softmax(scores, axis=-1)
    out = (attn @ v).permute(*range(k), k + 1, k, k + 2).reshape(*lead, n, c)
    return out @ p.wo


def grouped_attention(g: GroupedTokens, p: AttentionParams) -> GroupedTokens:
    out = multi_head_attention(g.groups, p)
    return GroupedTokens(out, g.height, g.width, g.channels, g.rate)


def sparse_attention_layer(x: Tensor, s: int, p: AttentionParams) -> Tensor:
    """Partition ``[..., H, W, C]`` at rate ``s``, attend within groups, reassemble."""
    return unpartition(grouped_attention(partition_strided(x, s), p))


def global_attention(x: Tensor, p: AttentionParams) -> Tensor:
    """Dense attention over all ``H*W`` tokens of ``[..., H, W, C]``."""
    *lead, h, w, c = x.shape
    return multi_head_attention(x.reshape(*lead, h * w, c), p).reshape(*lead, h, w, c)
